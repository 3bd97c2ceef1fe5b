//! Bit-level view of a binary16 word: fields, chunk split and midpoint fill.

use alignkv::half_bits::merge_chunks;
use alignkv::HalfWord;

fn main() -> alignkv::Result<()> {
    let h = HalfWord::encode(0.7431640625);
    println!(
        "{:.10} = {:#06x}  sign {} exponent {} mantissa {:#05x}  ulp 2^{}",
        h.decode(),
        h.bits(),
        h.sign(),
        h.biased_exponent(),
        h.mantissa(),
        h.ulp_exponent()?
    );

    let chunks = h.split();
    println!(
        "chunks: head {:#04x} mid {:#x} low {:#x}",
        chunks.head, chunks.mid, chunks.low
    );

    for (label, mid, low) in [
        ("8 bits ", None, None),
        ("12 bits", Some(chunks.mid), None),
        ("16 bits", Some(chunks.mid), Some(chunks.low)),
    ] {
        let r = merge_chunks(chunks.head, mid, low)?;
        println!(
            "{label}: {:#06x} -> {:.10}  error {:.3e}",
            r.bits(),
            r.decode(),
            r.decode() - h.decode()
        );
    }

    println!("\nkept  value         bound");
    for kept in 0..=10 {
        let r = h.truncate_fill(kept)?;
        let bound = 2f64.powi(9 - kept as i32 + h.ulp_exponent()?);
        println!("{kept:>4}  {:.10}  {bound:.3e}", r.decode());
    }
    Ok(())
}
