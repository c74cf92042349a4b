//! Print the built-in benchmark configuration as TOML.

fn main() -> hxdiag::Result<()> {
    print!("{}", hxdiag::bench::BenchConfig::default().to_toml()?);
    Ok(())
}
