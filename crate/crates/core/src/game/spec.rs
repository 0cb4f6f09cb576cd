//! JSON game files.
//!
//! ```json
//! {"m": 2, "box": [[-10, 10], [-10, 10]],
//!  "players": [{"affine_pieces": [{"a": [2, 1], "b": 0}], "quad": [[2, 0], [0, 0]],
//!               "linear": [0, 1], "constant": 0}, ...]}
//! ```
//!
//! Omitted fields default to empty or zero (an omitted box is the default
//! `[-100, 100]^m`). Unknown keys are rejected.

use serde::{Deserialize, Serialize};
use serde_json::error::Category;

use super::{Bound, Game, GameError, PlayerLoss, AffinePiece, DEFAULT_BOX_HALF_WIDTH};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameSpec {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default, rename = "box")]
    pub bounds: Vec<[f64; 2]>,
    #[serde(default)]
    pub players: Vec<PlayerSpec>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlayerSpec {
    #[serde(default)]
    pub affine_pieces: Vec<PieceSpec>,
    #[serde(default)]
    pub quad: Vec<Vec<f64>>,
    #[serde(default)]
    pub linear: Vec<f64>,
    #[serde(default)]
    pub constant: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceSpec {
    #[serde(default)]
    pub a: Vec<f64>,
    #[serde(default)]
    pub b: f64,
}

impl GameSpec {
    pub fn into_game(self) -> Result<Game, GameError> {
        let m = match self.m {
            Some(m) if m != self.players.len() => {
                return Err(GameError::Invalid(format!(
                    "m = {m} but {} players are listed",
                    self.players.len()
                )))
            }
            Some(m) => m,
            None => self.players.len(),
        };
        let bounds = if self.bounds.is_empty() {
            vec![Bound::new(-DEFAULT_BOX_HALF_WIDTH, DEFAULT_BOX_HALF_WIDTH); m]
        } else {
            self.bounds.iter().map(|[lo, hi]| Bound::new(*lo, *hi)).collect()
        };
        let losses = self
            .players
            .into_iter()
            .enumerate()
            .map(|(i, p)| p.into_loss(i, m))
            .collect::<Result<Vec<_>, _>>()?;
        Game::new(self.name.unwrap_or_else(|| "custom".into()), losses, bounds)
    }
}

impl PlayerSpec {
    fn into_loss(self, i: usize, m: usize) -> Result<PlayerLoss, GameError> {
        let quad = if self.quad.is_empty() {
            None
        } else {
            if self.quad.len() != m || self.quad.iter().any(|r| r.len() != m) {
                return Err(GameError::Inconsistent {
                    player: i,
                    what: format!("quadratic matrix must be {m}x{m}"),
                });
            }
            Some(self.quad.into_iter().flatten().collect())
        };
        let linear = if self.linear.is_empty() {
            vec![0.0; m]
        } else {
            self.linear
        };
        Ok(PlayerLoss {
            pieces: self
                .affine_pieces
                .into_iter()
                .map(|p| AffinePiece::new(if p.a.is_empty() { vec![0.0; m] } else { p.a }, p.b))
                .collect(),
            quad,
            linear,
            constant: self.constant,
        })
    }
}

/// Parses and validates a game file.
pub fn parse_game_spec(text: &str) -> Result<Game, GameError> {
    let spec: GameSpec = serde_json::from_str(text).map_err(|e| match e.classify() {
        Category::Syntax | Category::Eof => GameError::Syntax {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        },
        _ => GameError::Invalid(e.to_string()),
    })?;
    spec.into_game()
}

#[cfg(test)]
mod tests {
    use super::*;

    const DM_MAXFUN: &str = r#"{
        "m": 2,
        "players": [
            {"affine_pieces": [{"a": [2, 1], "b": 0}, {"a": [-1, 1], "b": -3}]},
            {"affine_pieces": [{"a": [2, 1], "b": 0}, {"a": [-1, 1], "b": -3}]}
        ]
    }"#;

    #[test]
    fn minimal_quadratic() {
        let g = parse_game_spec(
            r#"{"m": 2, "box": [[-1, 1], [-2, 2]],
                "players": [{"quad": [[2, 0], [0, 0]]}, {"quad": [[0, 0], [0, 2]], "linear": [0, 1]}]}"#,
        )
        .unwrap();
        assert_eq!(g.players(), 2);
        assert_eq!(g.bounds()[1], Bound::new(-2.0, 2.0));
        assert_eq!(g.evaluate(1, &[0.0, 1.0]).unwrap(), 2.0);
    }

    #[test]
    fn maxfun_matches_builtin() {
        let g = parse_game_spec(DM_MAXFUN).unwrap();
        assert_eq!(g.evaluate(0, &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(g.evaluate(0, &[-0.5, 0.5]).unwrap(), -0.5);
        assert_eq!(g.bounds()[0], Bound::new(-100.0, 100.0));
    }

    #[test]
    fn rejects_nonconvex_player() {
        let err = parse_game_spec(
            r#"{"m": 1, "players": [{"quad": [[-1]]}]}"#,
        )
        .unwrap_err();
        assert!(matches!(err, GameError::NotConvex { player: 0, coord: 0, .. }));
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_game_spec("{\n  \"m\": 2,\n  \"players\": [ }").unwrap_err();
        match err {
            GameError::Syntax { line, column, .. } => {
                assert_eq!(line, 3);
                assert!(column > 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_keys_and_bad_dimensions() {
        assert!(matches!(
            parse_game_spec(r#"{"m": 1, "players": [{"linear": [1]}], "extra": 1}"#),
            Err(GameError::Invalid(_))
        ));
        assert!(matches!(
            parse_game_spec(r#"{"m": 1, "players": [{"linear": [1], "qaud": [[1]]}]}"#),
            Err(GameError::Invalid(_))
        ));
        assert!(matches!(
            parse_game_spec(r#"{"m": 2, "players": [{"linear": [1, 0]}]}"#),
            Err(GameError::Invalid(_))
        ));
        assert!(matches!(
            parse_game_spec(r#"{"players": [{"linear": [1, 0]}]}"#),
            Err(GameError::Inconsistent { player: 0, .. })
        ));
        assert!(matches!(
            parse_game_spec(r#"{"players": [{"quad": [[1, 0]]}]}"#),
            Err(GameError::Inconsistent { player: 0, .. })
        ));
    }
}
