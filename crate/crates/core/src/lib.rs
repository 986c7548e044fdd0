//! Desk-scale simulation of wheeled vehicles crawling over rock courses,
//! with open-loop, rule-based and learned controllers, a demonstration
//! dataset format, and adaptive parameter tuning from demonstrations.

pub mod appld;
pub mod bclearn;
pub mod controllers;
pub mod dataset;
pub mod pgm;
pub mod rng;
pub mod sim;
pub mod tensorfile;
pub mod terrain;
pub mod vehicle;
