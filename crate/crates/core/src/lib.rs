pub mod compartment;
pub mod dynamics;
pub mod lattice;
pub mod averaging;
pub mod analysis;
pub mod specfile;
pub mod io;
pub mod striatum;
pub mod testkit;
