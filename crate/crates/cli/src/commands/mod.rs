pub mod calibrate;
pub mod curve;
pub mod fixedpoint;
pub mod simulate;
pub mod verify;
