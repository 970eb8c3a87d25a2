#![allow(dead_code)]

pub mod ap_oracle;
pub mod gradcheck;
pub mod mining_oracle;
pub mod whitening_check;
