//! Desk-scale laboratory contrasting autoregressive and masked-diffusion
//! sequence policies on synthetic manipulation and symbolic planning tasks.

pub mod ar;
pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod diffusion;
pub mod env;
pub mod harness;
pub mod heads;
pub mod layout;
pub mod model;
pub mod sampling;
pub mod vocab;
