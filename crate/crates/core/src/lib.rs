//! Distributionally robust implicit quantile networks (DRIQN) for sensor-noisy
//! marine navigation, with DQN/IQN and classical planner baselines.

pub mod agent;
pub mod baselines;
pub mod distrl;
pub mod dro;
pub mod harness;
pub mod noise;
pub mod optim;
pub mod qnet;
pub mod replay;
pub mod world;
