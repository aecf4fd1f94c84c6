//! Provenance ledger: register a generation, verify it by regeneration,
//! query an image, and watch tampering get caught.
//!
//!     cargo run --release --example ledger_roundtrip

use deepattrib::generators::{GeneratorArch, GeneratorModel, NoiseInput};
use deepattrib::ledger::{verify_entry, KeyPair, Ledger, ModelDatabase};
use deepattrib::rng::DetRng;

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let mut ledger = Ledger::open(dir.path().join("chain")).unwrap();
    let db = ModelDatabase::open(dir.path().join("models")).unwrap();
    let model = GeneratorModel::build(GeneratorArch::style_default(), 600).unwrap();
    let keys = KeyPair::generate(601);

    // Register three generations, one block each.
    let mut rng = DetRng::new(5);
    let mut last_image = None;
    for i in 0..3u64 {
        let seed = rng.standard_normal_tensor(&[64]);
        let entry = ledger
            .register_generation(&db, &model, &seed, i, 0.7, &keys, "2026-08-10T12:00:00Z")
            .unwrap();
        println!(
            "registered record {} (image hash {}...)",
            entry.record_id,
            &hex::encode(&entry.image_hash)[..12]
        );
        last_image = Some(
            model
                .generate(&seed, &NoiseInput::sample(model.arch(), i, 0.7))
                .unwrap(),
        );
        ledger.append_block(vec![entry], &db).unwrap();
    }

    // A verifying node independently regenerates each image.
    ledger.audit(&db).unwrap();
    println!("\naudit: all {} records regenerate and verify", ledger.entry_count());

    // Image validation answers membership exactly.
    let image = last_image.unwrap();
    println!("query registered image: {} match(es)", ledger.validate_image(&image).len());
    let mut nudged = image.clone();
    nudged.data_mut()[0] += 2.0 / 255.0;
    println!(
        "query after one 8-bit pixel nudge: {} match(es) - plausible deniability",
        ledger.validate_image(&nudged).len()
    );

    // Tampering: claim the same record came from a different seed.
    let mut forged = ledger.blocks()[2].entries[0].clone();
    forged.seed_bytes[3] ^= 0xff;
    println!(
        "\ntampered seed verifies? {:?}",
        verify_entry(&forged, &db).unwrap_err()
    );
    let mut resigned = ledger.blocks()[2].entries[0].clone();
    resigned.public_key = KeyPair::generate(9999).public_bytes().to_vec();
    println!(
        "substituted key verifies? {:?}",
        verify_entry(&resigned, &db).unwrap_err()
    );
}
