#![allow(dead_code)]

pub mod geometry;
pub mod planning;
pub mod qp;
