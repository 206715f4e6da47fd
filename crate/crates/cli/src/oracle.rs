//! `gne oracle`: reference solution for projection and strongly monotone games.

use std::path::Path;

use gne_core::game::load_game;
use gne_core::oracle::oracle_for;

use crate::artifacts::Artifacts;
use crate::{CliError, Status};

pub fn run(config: &Path, art: &Artifacts) -> Result<Status, CliError> {
    let spec = load_game(config)?;
    let sol = oracle_for(&spec)?;
    let doc = art.json("oracle.json", sol.to_json())?;
    println!("{}", serde_json::to_string(&doc)?);
    Ok(Status::Done)
}
