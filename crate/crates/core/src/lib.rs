pub mod blocklength;
pub mod divergences;
pub mod format;
pub mod hierarchy;
pub mod linalg;
pub mod one_shot;
pub mod par;
pub mod sdp;
pub mod states;
pub mod tasks;
