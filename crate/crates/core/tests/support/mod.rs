pub mod hollow_oracle;
pub mod rigs;
