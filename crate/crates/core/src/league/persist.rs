use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Generation, GenerationRef, League, LeagueError, MatchResult, PlayerRecord, Role};
use crate::env::EnvId;
use crate::policy::{deserialize_params, serialize_params, Arch};
use crate::PlayerId;

pub const SCHEMA_VERSION: u32 = 1;

/// On-disk league document. Parameters live in binary sidecar files in the
/// `<file>.params` directory next to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeagueFile {
    pub schema_version: u32,
    pub env: EnvId,
    pub k_factor: f64,
    pub initial_rating: f64,
    pub players: Vec<PlayerEntry>,
    pub matches: Vec<MatchResult>,
    /// Ratings at save time; informational, recomputed on load.
    pub ratings: Vec<RatingEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlayerEntry {
    pub player_id: PlayerId,
    pub role: Role,
    pub arch: Arch,
    pub generations: Vec<GenerationEntry>,
    pub live: Option<GenerationEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationEntry {
    pub index: u32,
    pub checksum: String,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatingEntry {
    pub player_id: PlayerId,
    pub generation: u32,
    pub rating: f64,
}

fn io(e: std::io::Error) -> LeagueError {
    LeagueError::Io(e.to_string())
}

fn sidecar_dir(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".params");
    path.with_file_name(name)
}

/// Write via a temporary sibling and rename, so readers never see a
/// partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), LeagueError> {
    let mut tmp = path.as_os_str().to_os_string();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

fn file_stem(order: usize, id: &PlayerId) -> String {
    let clean: String = id
        .as_str()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect();
    format!("{order:03}_{clean}")
}

impl League {
    /// Persist the league document and parameter sidecars.
    pub fn save(&self, path: &Path) -> Result<(), LeagueError> {
        let dir = sidecar_dir(path);
        fs::create_dir_all(&dir).map_err(io)?;
        let dir_name = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let mut players = Vec::new();
        for (order, rec) in self.players().enumerate() {
            let stem = file_stem(order, &rec.player_id);
            let arch = rec
                .live
                .as_ref()
                .map(|p| p.arch)
                .or_else(|| rec.generations.first().map(|g| g.params.arch))
                .ok_or_else(|| LeagueError::NoLiveParams(rec.player_id.clone()))?;
            let mut generations = Vec::new();
            for g in &rec.generations {
                let file = format!("{stem}_g{}.bin", g.index);
                let target = dir.join(&file);
                if !target.exists() {
                    // Generations never change once frozen.
                    write_atomic(&target, &serialize_params(&g.params))?;
                }
                generations.push(GenerationEntry {
                    index: g.index,
                    checksum: g.checksum.clone(),
                    file: format!("{dir_name}/{file}"),
                });
            }
            let live = match &rec.live {
                Some(p) => {
                    let file = format!("{stem}_live.bin");
                    write_atomic(&dir.join(&file), &serialize_params(p))?;
                    Some(GenerationEntry {
                        index: 0,
                        checksum: p.checksum(),
                        file: format!("{dir_name}/{file}"),
                    })
                }
                None => None,
            };
            players.push(PlayerEntry {
                player_id: rec.player_id.clone(),
                role: rec.role,
                arch,
                generations,
                live,
            });
        }
        let ratings = self
            .ratings_or_initial()
            .into_iter()
            .map(|(g, rating)| RatingEntry {
                player_id: g.player_id,
                generation: g.generation,
                rating,
            })
            .collect();
        let doc = LeagueFile {
            schema_version: SCHEMA_VERSION,
            env: self.env,
            k_factor: self.k_factor,
            initial_rating: self.initial_rating,
            players,
            matches: self.matches().to_vec(),
            ratings,
        };
        let text = serde_json::to_string_pretty(&doc).map_err(|e| LeagueError::Format(e.to_string()))?;
        write_atomic(path, text.as_bytes())
    }

    /// Load a league document, verifying every sidecar against its checksum.
    pub fn load(path: &Path) -> Result<League, LeagueError> {
        let text = fs::read_to_string(path).map_err(io)?;
        let doc: LeagueFile = serde_json::from_str(&text).map_err(|e| LeagueError::Format(e.to_string()))?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(LeagueError::SchemaVersion(doc.schema_version));
        }
        let base = path.parent().unwrap_or(Path::new("."));
        let read = |entry: &GenerationEntry, arch: &Arch, generation: GenerationRef| {
            let bytes = fs::read(base.join(&entry.file)).map_err(io)?;
            let params = deserialize_params(&bytes, arch)?;
            if params.checksum() != entry.checksum {
                return Err(LeagueError::ChecksumMismatch { generation });
            }
            Ok(Arc::new(params))
        };
        let mut league = League::new(doc.env);
        league.k_factor = doc.k_factor;
        league.initial_rating = doc.initial_rating;
        for p in &doc.players {
            let mut generations = Vec::new();
            for (i, g) in p.generations.iter().enumerate() {
                if g.index as usize != i + 1 {
                    return Err(LeagueError::Format(format!("{} generations are not dense", p.player_id)));
                }
                let params = read(g, &p.arch, GenerationRef::new(p.player_id.clone(), g.index))?;
                generations.push(Generation {
                    index: g.index,
                    params,
                    checksum: g.checksum.clone(),
                });
            }
            let live = match &p.live {
                Some(e) => Some(read(e, &p.arch, GenerationRef::new(p.player_id.clone(), 0))?),
                None => None,
            };
            league.players.insert(
                p.player_id.clone(),
                PlayerRecord {
                    player_id: p.player_id.clone(),
                    role: p.role,
                    generations,
                    live,
                },
            );
        }
        for m in doc.matches {
            let id = m.id;
            league.record_match(m)?;
            league.matches.last_mut().expect("just recorded").id = id;
        }
        Ok(league)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::league::{scripted_params, Outcome, Pairing};
    use crate::policy::PolicyParameters;

    #[test]
    fn save_load_reproduces_ratings() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("league.json");
        let mut l = League::new(EnvId::MatrixRps);
        l.add_baseline("rock".into(), scripted_params("rock".into(), 1, 3, &[0])).unwrap();
        let arch = Arch::Tabular { states: 1, actions: 3 };
        l.add_player("a b".into(), Role::Main, PolicyParameters::init("a b".into(), arch, 1))
            .unwrap();
        l.snapshot_generation(&"a b".into()).unwrap();
        l.snapshot_generation(&"a b".into()).unwrap();
        l.evaluation_round(&Pairing::AllPairs, 6, 9).unwrap();
        l.save(&path).unwrap();

        let back = League::load(&path).unwrap();
        assert_eq!(back.ratings_or_initial(), l.ratings_or_initial());
        assert_eq!(back.matches(), l.matches());
        back.verify_generations().unwrap();

        // Saving again over the same sidecars is fine.
        l.record_match(MatchResult::new(
            GenerationRef::new("a b", 1),
            GenerationRef::new("rock", 1),
            Outcome::Draw,
            1,
        ))
        .unwrap();
        l.save(&path).unwrap();
        assert_eq!(League::load(&path).unwrap().ratings_or_initial(), l.ratings_or_initial());
    }

    #[test]
    fn tampered_sidecar_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.json");
        let mut l = League::new(EnvId::MatrixRps);
        l.add_baseline("rock".into(), scripted_params("rock".into(), 1, 3, &[0])).unwrap();
        l.save(&path).unwrap();
        let bin = sidecar_dir(&path).join("000_rock_g1.bin");
        let mut bytes = fs::read(&bin).unwrap();
        let n = bytes.len();
        bytes[n - 1] ^= 0x40;
        fs::write(&bin, bytes).unwrap();
        assert!(matches!(League::load(&path), Err(LeagueError::ChecksumMismatch { .. })));
    }
}
