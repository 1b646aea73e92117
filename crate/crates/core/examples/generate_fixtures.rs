//! Regenerates the bundled fixtures under `crates/core/fixtures/`.
//!
//! Run with `cargo run --example generate_fixtures`. Output is deterministic.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::Result;
use privedit::imaging::save_image;
use privedit::landmarks::sidecar_path;
use privedit::synthetic::{portrait_image, portrait_landmarks, studio_backdrop, PortraitParams};

const CELEBA_ATTRIBUTES: [&str; 40] = [
    "5_o_Clock_Shadow", "Arched_Eyebrows", "Attractive", "Bags_Under_Eyes", "Bald", "Bangs", "Big_Lips", "Big_Nose",
    "Black_Hair", "Blond_Hair", "Blurry", "Brown_Hair", "Bushy_Eyebrows", "Chubby", "Double_Chin", "Eyeglasses",
    "Goatee", "Gray_Hair", "Heavy_Makeup", "High_Cheekbones", "Male", "Mouth_Slightly_Open", "Mustache",
    "Narrow_Eyes", "No_Beard", "Oval_Face", "Pale_Skin", "Pointy_Nose", "Receding_Hairline", "Rosy_Cheeks",
    "Sideburns", "Smiling", "Straight_Hair", "Wavy_Hair", "Wearing_Earrings", "Wearing_Hat", "Wearing_Lipstick",
    "Wearing_Necklace", "Wearing_Necktie", "Young",
];

/// (Male, Young, Mustache, No_Beard, Wearing_Lipstick, Brown_Eyes) per fixture subject.
const SUBJECTS: [(bool, bool, bool, bool, bool, bool); 5] = [
    (false, true, false, true, true, true),
    (true, true, true, false, false, true),
    (false, false, false, true, true, false),
    (true, false, false, true, false, false),
    (true, true, true, false, false, true),
];

fn sign(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "-1"
    }
}

fn celeba_document(rows: &[(String, Vec<&str>)], names: &[&str]) -> String {
    let mut doc = format!("{}\n{}\n", rows.len(), names.join(" "));
    for (file, values) in rows {
        doc.push_str(&format!("{file} {}\n", values.join(" ")));
    }
    doc
}

fn subject_row(i: usize, names: &[&str]) -> Vec<&'static str> {
    let (male, young, mustache, no_beard, lipstick, brown) = SUBJECTS[i];
    names
        .iter()
        .map(|n| match *n {
            "Male" => sign(male),
            "Young" => sign(young),
            "Mustache" => sign(mustache),
            "No_Beard" => sign(no_beard),
            "Wearing_Lipstick" => sign(lipstick),
            "Brown_Eyes" => sign(brown),
            "Smiling" => sign(i.is_multiple_of(2)),
            _ => "-1",
        })
        .collect()
}

fn main() -> Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let celeba = dir.join("celeba");
    fs::create_dir_all(&celeba)?;

    for i in 0..5 {
        let params = PortraitParams::fixture(i);
        let path = dir.join(format!("{:06}.jpg", i + 1));
        save_image(&portrait_image(&params), &path, 95)?;
        fs::write(sidecar_path(&path), portrait_landmarks(&params).to_json())?;
        println!("wrote {}", path.display());
    }
    save_image(&studio_backdrop(512, 512), &dir.join("studio_backdrop.png"), 95)?;

    // Two hand-checkable rows in the standard 40-column layout.
    let names: Vec<&str> = CELEBA_ATTRIBUTES.to_vec();
    let valid: Vec<(String, Vec<&str>)> = (0..2).map(|i| (format!("{:06}.jpg", i + 1), subject_row(i, &names))).collect();
    fs::write(celeba.join("list_attr_valid.txt"), celeba_document(&valid, &names))?;

    let mut bad = valid.clone();
    bad[1].1[3] = "0";
    fs::write(celeba.join("list_attr_non_binary.txt"), celeba_document(&bad, &names))?;

    let mut short = valid.clone();
    short[0].1.pop();
    fs::write(celeba.join("list_attr_arity_mismatch.txt"), celeba_document(&short, &names))?;

    // All five subjects plus the supplementary eye-colour column.
    let mut ext = names.clone();
    ext.push("Brown_Eyes");
    let rows: Vec<(String, Vec<&str>)> = (0..5).map(|i| (format!("{:06}.jpg", i + 1), subject_row(i, &ext))).collect();
    fs::write(celeba.join("list_attr_fixtures.txt"), celeba_document(&rows, &ext))?;

    // Recorded answers: correct on unmasked images, abstaining or guessing "no" on masked ones.
    let mut answers: BTreeMap<String, BTreeMap<&str, &str>> = BTreeMap::new();
    for (i, s) in SUBJECTS.iter().enumerate() {
        let id = format!("{:06}", i + 1);
        let (male, young, mustache, no_beard, lipstick, brown) = *s;
        let yn = |b: bool| if b { "Yes." } else { "No." };
        let clear = BTreeMap::from([
            ("Age", if young { "Young" } else { "Old" }),
            ("Mustache", yn(mustache)),
            ("Beard", yn(!no_beard)),
            ("Brown Eyes", yn(brown)),
            ("Gender", if male { "Male" } else { "Female" }),
            ("Lipstick", yn(lipstick)),
        ]);
        let masked = BTreeMap::from([
            ("Age", "I cannot tell."),
            ("Mustache", "No"),
            ("Beard", "No"),
            ("Brown Eyes", "No"),
            ("Gender", if male { "Male" } else { "I cannot tell." }),
            ("Lipstick", "No"),
        ]);
        answers.insert(id.clone(), clear);
        answers.insert(format!("{id}_mask"), masked);
    }
    let replay = serde_json::json!({ "model": "recorded-vlm", "answers": answers });
    fs::write(dir.join("replay_oracle.json"), serde_json::to_string_pretty(&replay)? + "\n")?;
    println!("wrote fixtures to {}", dir.display());
    Ok(())
}
