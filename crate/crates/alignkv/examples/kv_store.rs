//! Appending tokens to the plane-split cache and reading back prefixes.

use alignkv::{AccessCounter, HalfWord, KvStore, ReadTier, Tier};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let row = |xs: [f64; 4]| xs.map(HalfWord::encode).to_vec();
    let mut store = KvStore::new(4);
    store.append_token(&row([0.5, -1.25, 3.0, 0.0]), &row([1.0, 2.0, -0.75, 0.1]))?;
    store.append_token(&row([-2.0, 0.3, 1.0, 0.01]), &row([0.0, 0.0, 0.0, 0.0]))?;
    store.append_token(&row([0.1, 4.5, -0.2, 0.5]), &row([-3.0, 0.25, 0.5, 1.5]))?;

    let fmt = |hs: &[HalfWord]| {
        hs.iter()
            .map(|h| h.decode().to_string())
            .collect::<Vec<_>>()
            .join(", ")
    };
    println!("K colmax: [{}]", fmt(store.colmax()));
    println!("V rowmax: [{}]", fmt(store.rowmax()));
    println!(
        "K storage: {} bytes for {} elements",
        store.k().storage_bytes(),
        3 * 4
    );

    let mut counter = AccessCounter::default();
    for tier in [
        ReadTier::Read(Tier::T8),
        ReadTier::Read(Tier::T12),
        ReadTier::Read(Tier::T16),
        ReadTier::Skip,
    ] {
        let col = store.k().read_channel(1, tier, &mut counter)?;
        println!("channel 1 at {tier:?}: [{}]", fmt(&col));
    }
    println!(
        "read {} bits over {} elements ({} skipped), average {:.2}",
        counter.bits_read,
        counter.elements_read,
        counter.skipped,
        counter.average_bit_width()?
    );

    let dir = tempfile::tempdir()?;
    store.save_snapshot(dir.path())?;
    let back = KvStore::load_snapshot(dir.path())?;
    println!("snapshot roundtrip identical: {}", back == store);
    Ok(())
}
