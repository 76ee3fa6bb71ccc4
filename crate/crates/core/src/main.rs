use clap::Parser;

fn main() -> anyhow::Result<()> {
    psi_leakage::cli::run(psi_leakage::cli::Cli::parse())
}
