//! Symbolic dummy-audience state: N avatars moving collectively, a seeded
//! per-avatar variation draw on each movement change, and the sounds
//! currently playing.

use std::collections::{BTreeMap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reactor::{MovementKind, Reaction, ReactionEvent};

pub const DEFAULT_AVATARS: usize = 200;
pub const VARIATION_PROBABILITY: f64 = 0.2;
pub const CHEER_DURATION_MS: u64 = 4000;
pub const MAX_ACTIVE_SOUNDS: usize = 32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CrowdError {
    #[error("crowd needs at least one avatar")]
    Empty,
    #[error("movement {0} has no registry entry")]
    UnknownMovement(MovementKind),
    #[error("variation probability must lie in [0, 1], got {0}")]
    BadProbability(f64),
}

/// Animation variations available per movement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariationRegistry(BTreeMap<MovementKind, Vec<String>>);

impl VariationRegistry {
    pub fn new(entries: impl IntoIterator<Item = (MovementKind, Vec<String>)>) -> Self {
        Self(entries.into_iter().collect())
    }

    pub fn variations(&self, kind: MovementKind) -> Option<&[String]> {
        self.0.get(&kind).map(Vec::as_slice)
    }
}

impl Default for VariationRegistry {
    fn default() -> Self {
        let v = |ids: &[&str]| ids.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        Self::new([
            (MovementKind::ArmShakeBackForth, v(&["one_arm", "crossed_direction"])),
            (MovementKind::ArmShakeSideBySide, v(&["one_arm", "crossed_direction"])),
            (MovementKind::HandClap, v(&["overhead"])),
            (MovementKind::Disappointed, vec![]),
            (MovementKind::Idle, vec![]),
        ])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AvatarState {
    pub id: usize,
    pub movement: MovementKind,
    pub variant: Option<String>,
    pub playback_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActiveSound {
    pub kind: String,
    pub until_ms: u64,
}

/// Serialized crowd view for text rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrowdSnapshot {
    pub n: usize,
    pub movement: MovementKind,
    pub playback_rate: f64,
    pub variants: Vec<usize>,
    pub active_sounds: Vec<ActiveSound>,
}

#[derive(Debug, Clone)]
pub struct CrowdState {
    avatars: Vec<AvatarState>,
    seed: u64,
    registry: VariationRegistry,
    variation_probability: f64,
    rng: ChaCha8Rng,
    sounds: VecDeque<ActiveSound>,
    now_ms: u64,
}

impl PartialEq for CrowdState {
    fn eq(&self, other: &Self) -> bool {
        self.avatars == other.avatars && self.sounds == other.sounds && self.now_ms == other.now_ms
    }
}

pub fn init_crowd(n: usize, seed: u64, registry: VariationRegistry) -> Result<CrowdState, CrowdError> {
    CrowdState::new(n, seed, registry)
}

impl CrowdState {
    pub fn new(n: usize, seed: u64, registry: VariationRegistry) -> Result<Self, CrowdError> {
        if n == 0 {
            return Err(CrowdError::Empty);
        }
        let avatars = (0..n)
            .map(|id| AvatarState { id, movement: MovementKind::Idle, variant: None, playback_rate: 1.0 })
            .collect();
        Ok(Self {
            avatars,
            seed,
            registry,
            variation_probability: VARIATION_PROBABILITY,
            rng: ChaCha8Rng::seed_from_u64(seed),
            sounds: VecDeque::new(),
            now_ms: 0,
        })
    }

    pub fn with_variation_probability(mut self, p: f64) -> Result<Self, CrowdError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(CrowdError::BadProbability(p));
        }
        self.variation_probability = p;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.avatars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.avatars.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn variation_probability(&self) -> f64 {
        self.variation_probability
    }

    pub fn avatars(&self) -> &[AvatarState] {
        &self.avatars
    }

    pub fn movement(&self) -> MovementKind {
        self.avatars[0].movement
    }

    pub fn playback_rate(&self) -> f64 {
        self.avatars[0].playback_rate
    }

    pub fn variant_count(&self) -> usize {
        self.avatars.iter().filter(|a| a.variant.is_some()).count()
    }

    pub fn active_sounds(&self) -> impl Iterator<Item = &ActiveSound> {
        self.sounds.iter()
    }

    /// Moves the whole crowd and re-rolls variants. Each avatar, in id order,
    /// takes one Bernoulli draw and, on success with a non-empty registry
    /// entry, one uniform pick.
    pub fn apply_movement(&mut self, kind: MovementKind, rate: f64) -> Result<(), CrowdError> {
        let variations = self.registry.variations(kind).ok_or(CrowdError::UnknownMovement(kind))?.to_vec();
        self.set_movement(kind, rate, &variations);
        Ok(())
    }

    fn set_movement(&mut self, kind: MovementKind, rate: f64, variations: &[String]) {
        for avatar in &mut self.avatars {
            avatar.movement = kind;
            avatar.playback_rate = rate;
            let varied = self.rng.random_bool(self.variation_probability);
            avatar.variant = if varied && !variations.is_empty() {
                Some(variations[self.rng.random_range(0..variations.len())].clone())
            } else {
                None
            };
        }
    }

    /// Drops sounds that have finished by `t_ms`.
    pub fn expire(&mut self, t_ms: u64) {
        self.now_ms = self.now_ms.max(t_ms);
        let now = self.now_ms;
        self.sounds.retain(|s| s.until_ms > now);
    }

    fn push_sound(&mut self, kind: String, until_ms: u64) {
        if self.sounds.len() >= MAX_ACTIVE_SOUNDS {
            // evict whatever ends first
            if let Some(idx) = (0..self.sounds.len()).min_by_key(|&i| self.sounds[i].until_ms) {
                self.sounds.remove(idx);
            }
        }
        self.sounds.push_back(ActiveSound { kind, until_ms });
    }

    pub fn apply_event(&mut self, event: &ReactionEvent) {
        self.expire(event.t_ms);
        match &event.reaction {
            Reaction::Movement { movement, playback_rate } => {
                let variations = self.registry.variations(*movement).map(<[String]>::to_vec).unwrap_or_default();
                self.set_movement(*movement, *playback_rate, &variations);
            }
            Reaction::Cheer { cheer } => self.push_sound(cheer.as_str().to_string(), event.t_ms + CHEER_DURATION_MS),
            Reaction::Singalong { until_ms, .. } => self.push_sound("singalong".to_string(), *until_ms),
        }
    }

    pub fn snapshot(&self) -> CrowdSnapshot {
        CrowdSnapshot {
            n: self.avatars.len(),
            movement: self.movement(),
            playback_rate: self.playback_rate(),
            variants: self.avatars.iter().filter(|a| a.variant.is_some()).map(|a| a.id).collect(),
            active_sounds: self.sounds.iter().cloned().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reactor::CheerKind;

    #[test]
    fn init_examples() {
        let c = init_crowd(200, 42, VariationRegistry::default()).unwrap();
        assert_eq!(c.len(), 200);
        assert!(c.avatars().iter().all(|a| a.movement == MovementKind::Idle && a.playback_rate == 1.0));
        assert_eq!(c.variant_count(), 0);
        assert_eq!(init_crowd(1, 0, VariationRegistry::default()).unwrap().len(), 1);
        assert_eq!(init_crowd(0, 0, VariationRegistry::default()).unwrap_err(), CrowdError::Empty);
    }

    #[test]
    fn empty_registry_entry_clears_variants() {
        let mut c = init_crowd(200, 1, VariationRegistry::default()).unwrap();
        c.apply_movement(MovementKind::HandClap, 1.0).unwrap();
        assert!(c.variant_count() > 0);
        c.apply_movement(MovementKind::Disappointed, 1.0).unwrap();
        assert_eq!(c.variant_count(), 0);
    }

    #[test]
    fn unknown_movement_is_an_error() {
        let reg = VariationRegistry::new([(MovementKind::Idle, vec![])]);
        let mut c = init_crowd(3, 1, reg).unwrap();
        assert_eq!(
            c.apply_movement(MovementKind::HandClap, 1.0).unwrap_err(),
            CrowdError::UnknownMovement(MovementKind::HandClap)
        );
    }

    #[test]
    fn seeded_variants_reproduce() {
        let run = |seed| {
            let mut c = init_crowd(200, seed, VariationRegistry::default()).unwrap();
            c.apply_movement(MovementKind::ArmShakeBackForth, 1.1).unwrap();
            c.snapshot().variants
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }

    #[test]
    fn movement_event_moves_everyone() {
        let mut c = init_crowd(10, 3, VariationRegistry::default()).unwrap();
        c.apply_event(&ReactionEvent {
            t_ms: 0,
            reaction: Reaction::Movement { movement: MovementKind::HandClap, playback_rate: 1.0 },
        });
        assert!(c.avatars().iter().all(|a| a.movement == MovementKind::HandClap));
    }

    #[test]
    fn cheers_expire_after_four_seconds() {
        let mut c = init_crowd(5, 3, VariationRegistry::default()).unwrap();
        let cheer = |t| ReactionEvent { t_ms: t, reaction: Reaction::Cheer { cheer: CheerKind::LoudCheer } };
        c.apply_event(&cheer(1000));
        assert_eq!(c.active_sounds().next().unwrap().until_ms, 5000);
        c.apply_event(&cheer(3000));
        assert_eq!(c.active_sounds().count(), 2);
        c.expire(5000);
        assert_eq!(c.active_sounds().count(), 1);
        c.expire(7000);
        assert_eq!(c.active_sounds().count(), 0);
    }

    #[test]
    fn singalong_lasts_until_window_end() {
        let mut c = init_crowd(5, 3, VariationRegistry::default()).unwrap();
        c.apply_event(&ReactionEvent {
            t_ms: 16_000,
            reaction: Reaction::Singalong { window_id: "w".into(), until_ms: 20_000 },
        });
        let s = c.snapshot();
        assert_eq!(s.active_sounds, vec![ActiveSound { kind: "singalong".into(), until_ms: 20_000 }]);
    }

    #[test]
    fn sound_list_is_bounded() {
        let mut c = init_crowd(1, 3, VariationRegistry::default()).unwrap();
        for i in 0..(MAX_ACTIVE_SOUNDS as u64 + 10) {
            c.apply_event(&ReactionEvent {
                t_ms: i,
                reaction: Reaction::Singalong { window_id: format!("w{i}"), until_ms: 1_000_000 - i },
            });
        }
        assert_eq!(c.active_sounds().count(), MAX_ACTIVE_SOUNDS);
    }

    #[test]
    fn snapshot_serializes() {
        let c = init_crowd(2, 3, VariationRegistry::default()).unwrap();
        let json = serde_json::to_string(&c.snapshot()).unwrap();
        assert_eq!(json, r#"{"n":2,"movement":"idle","playback_rate":1.0,"variants":[],"active_sounds":[]}"#);
    }
}
