pub mod apply;
pub mod bench;
pub mod simulate;
pub mod verify;
