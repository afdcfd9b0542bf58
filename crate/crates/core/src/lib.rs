pub mod bee;
pub mod checksum;
pub mod profile;
pub mod stack;
pub mod matching;
pub mod grid;
pub mod scenario;
