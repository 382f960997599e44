pub mod evaluate;
pub mod gen_data;
pub mod sample;
pub mod train;
pub mod verify;
