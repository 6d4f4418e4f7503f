#![allow(dead_code)]

pub mod matching;
pub mod runtime;
pub mod wire;
