use serde::{Deserialize, Serialize};

use super::{ObjectClass, SceneSpec};

/// Half-width of the ego lane, meters.
pub const LANE_HALF_WIDTH: f64 = 1.0;
/// Forward range within which an in-lane pedestrian forces a stop.
pub const STOP_RANGE: f64 = 5.0;
/// Lateral offset beyond which the nearest object triggers a turn.
pub const TURN_OFFSET: f64 = 0.5;

/// The fixed command vocabulary.
pub const COMMAND_WORDS: [&str; 16] = [
    "stop",
    "go",
    "turn",
    "left",
    "right",
    "ahead",
    "pedestrian",
    "vehicle",
    "barrier",
    "straight",
    "keep",
    "lane",
    "avoid",
    "slow",
    "clear",
    "road",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommandLabel {
    Stop,
    Go,
    TurnLeft,
    TurnRight,
}

impl CommandLabel {
    pub const ALL: [CommandLabel; 4] = [
        CommandLabel::Stop,
        CommandLabel::Go,
        CommandLabel::TurnLeft,
        CommandLabel::TurnRight,
    ];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            CommandLabel::Stop => "stop",
            CommandLabel::Go => "go",
            CommandLabel::TurnLeft => "turn_left",
            CommandLabel::TurnRight => "turn_right",
        }
    }
}

/// Rule-based driving command:
///
/// 1. a pedestrian in the ego lane (`|x| ≤ LANE_HALF_WIDTH`) no farther
///    than `STOP_RANGE` ahead → stop;
/// 2. otherwise the object nearest the ego vehicle (ground distance) with
///    lateral position `x > +0.5` → turn left, `x < −0.5` → turn right;
/// 3. otherwise go.
pub fn derive_command(scene: &SceneSpec) -> (String, CommandLabel) {
    let blocking = scene.objects.iter().any(|o| {
        o.class == ObjectClass::Pedestrian
            && o.center[0].abs() <= LANE_HALF_WIDTH
            && o.center[2] > 0.0
            && o.center[2] <= STOP_RANGE
    });
    if blocking {
        return ("stop ahead pedestrian".into(), CommandLabel::Stop);
    }
    let nearest = scene.objects.iter().min_by(|a, b| {
        let da = a.center[0].hypot(a.center[2]);
        let db = b.center[0].hypot(b.center[2]);
        da.total_cmp(&db)
    });
    match nearest {
        Some(o) if o.center[0] > TURN_OFFSET => (
            format!("turn left avoid {}", o.class.word()),
            CommandLabel::TurnLeft,
        ),
        Some(o) if o.center[0] < -TURN_OFFSET => (
            format!("turn right avoid {}", o.class.word()),
            CommandLabel::TurnRight,
        ),
        _ => ("go straight road clear".into(), CommandLabel::Go),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::SceneObject;

    fn one(class: ObjectClass, center: [f64; 3]) -> SceneSpec {
        SceneSpec {
            seed: 0,
            ground_height: 1.5,
            objects: vec![SceneObject::new(class, center)],
        }
    }

    #[test]
    fn rule_clauses() {
        assert_eq!(
            derive_command(&one(ObjectClass::Pedestrian, [0.0, 0.0, 3.0])),
            ("stop ahead pedestrian".to_string(), CommandLabel::Stop)
        );
        assert_eq!(
            derive_command(&one(ObjectClass::Vehicle, [2.0, 0.0, 6.0])).1,
            CommandLabel::TurnLeft
        );
        assert_eq!(
            derive_command(&one(ObjectClass::Barrier, [0.0, 0.0, 20.0])).1,
            CommandLabel::Go
        );
        assert_eq!(
            derive_command(&one(ObjectClass::Barrier, [-1.2, 0.0, 5.0])).1,
            CommandLabel::TurnRight
        );
    }

    #[test]
    fn texts_use_only_vocabulary_words() {
        for class in ObjectClass::ALL {
            for x in [-2.0, 0.0, 2.0] {
                for z in [3.0, 9.0] {
                    let (text, _) = derive_command(&one(class, [x, 0.0, z]));
                    for w in text.split_whitespace() {
                        assert!(COMMAND_WORDS.contains(&w), "{w}");
                    }
                }
            }
        }
    }
}
