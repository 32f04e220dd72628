#![allow(dead_code)]

pub mod gradcheck;
pub mod fitting;
pub mod oracles;
