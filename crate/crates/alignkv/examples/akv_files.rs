//! Writing and reading AKV tensor files, and what malformed files produce.

use alignkv::data_io::{generate, HalfTensor, SynthConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let data = generate(&SynthConfig::new(8, 4, 1))?;
    let path = dir.path().join("K.akv");
    data.k.save(&path)?;

    let bytes = std::fs::read(&path)?;
    println!("K.akv: {} bytes, header {:02x?}", bytes.len(), &bytes[..20]);
    let back = HalfTensor::load(&path)?;
    println!("dims {:?}, identical: {}", back.dims(), back == data.k);

    let mut bad = bytes.clone();
    bad[3] = b'2';
    println!(
        "bad magic   -> {}",
        HalfTensor::from_bytes(&bad).unwrap_err()
    );
    println!(
        "truncated   -> {}",
        HalfTensor::from_bytes(&bytes[..bytes.len() - 1]).unwrap_err()
    );
    let mut long = bytes.clone();
    long.push(0);
    println!(
        "trailing    -> {}",
        HalfTensor::from_bytes(&long).unwrap_err()
    );
    let mut dtype = bytes;
    dtype[5] = 7;
    println!(
        "dtype       -> {}",
        HalfTensor::from_bytes(&dtype).unwrap_err()
    );
    Ok(())
}
