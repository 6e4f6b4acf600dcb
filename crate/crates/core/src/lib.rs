pub mod cli;
pub mod dispersion;
pub mod dynamics;
pub mod emission;
pub mod modefields;
pub mod numerics;
#[cfg(test)]
mod properties;
pub mod specfun;
pub mod twodot;
pub mod units_media;
