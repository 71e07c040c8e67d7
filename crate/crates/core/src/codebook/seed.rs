use super::Codebook;

/// The shipped seed codebook (version 1). Items are the codes named in the
/// published findings; definitions are reconstructed and marked as such.
pub const SEED_CODEBOOK_JSON: &str = include_str!("../../assets/seed_codebook.json");

pub fn seed_codebook() -> Codebook {
    Codebook::from_json(SEED_CODEBOOK_JSON).expect("seed codebook is valid")
}
