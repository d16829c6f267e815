//! End to end through the command-line interface: write a CSV and a biasing
//! config, validate, solve, and fit a debiased regression.

use std::fs;

use debias_erm::cli;

fn main() -> std::io::Result<()> {
    let dir = std::env::temp_dir().join("debias-csv-pipeline");
    fs::create_dir_all(&dir)?;
    let data = dir.join("data.csv");
    let bias = dir.join("bias.toml");
    fs::write(
        &data,
        "x0,y,sample_id\n0.2,0.4,0\n0.7,1.3,0\n0.9,1.9,0\n0.5,1.0,1\n1.5,3.1,1\n2.5,5.2,1\n",
    )?;
    fs::write(
        &bias,
        "[[biasing]]\nkind = \"component_below\"\nj = 0\nc = 1.0\n\n[[biasing]]\nkind = \"whole_space\"\n",
    )?;

    let (d, b, out) = (data.to_str().unwrap(), bias.to_str().unwrap(), dir.to_str().unwrap());
    let code = cli::run(["debias", "validate", "--data", d, "--bias", b]);
    println!("validate exit code {code}");
    let code = cli::run(["debias", "solve", "--data", d, "--bias", b, "--out", out]);
    println!("solve exit code {code}");
    println!("weights.csv:\n{}", fs::read_to_string(dir.join("weights.csv"))?);
    let code = cli::run(["debias", "fit", "--data", d, "--bias", b, "--out", out]);
    println!("fit exit code {code}");
    println!("model.json:\n{}", fs::read_to_string(dir.join("model.json"))?);
    Ok(())
}
