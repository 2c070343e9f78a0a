pub mod avg_consensus;
pub mod he_slots;
pub mod leader_election;
pub mod netsim;
pub mod outlier_consensus;
pub mod process;
pub mod scenario;
pub mod topology;
