//! Writing and reading tensors and models in the CPKT1 / CPKM1 formats.
//!
//! Usage: cargo run --example tensor_io [directory]

use cpkit::generators::{random_low_rank, Family, ProblemSpec};
use cpkit::io::{load_model, load_tensor, save_model, save_tensor};

fn main() -> cpkit::Result<()> {
    let dir = std::env::args().nth(1).map_or_else(std::env::temp_dir, Into::into);
    let (model, x) = random_low_rank(&ProblemSpec::new(Family::Gaussian, 4, 6, 3, 99))?;

    let tpath = dir.join("example.cpkt");
    let mpath = dir.join("example.cpkm");
    save_tensor(&tpath, &x)?;
    save_model(&mpath, &model)?;
    println!("{}: {} bytes", tpath.display(), std::fs::metadata(&tpath)?.len());
    println!("{}: {} bytes", mpath.display(), std::fs::metadata(&mpath)?.len());

    let x2 = load_tensor(&tpath)?;
    let m2 = load_model(&mpath)?;
    println!("tensor round trip exact: {}", x2 == x);
    println!("model round trip exact: {}", m2 == model);
    println!("model reconstructs tensor: {}", m2.reconstruct()?.as_slice().iter().zip(x.as_slice()).all(|(a, b)| (a - b).abs() < 1e-12));
    Ok(())
}
