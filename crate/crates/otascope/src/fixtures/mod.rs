//! Synthetic capture generation: a small pcap writer, frame builders, scripted
//! traffic scenarios with hand-written expected results, and a verifier that
//! checks a processed store against those expectations.

pub mod frames;
pub mod pcapio;
pub mod scenarios;
pub mod tlsgen;
