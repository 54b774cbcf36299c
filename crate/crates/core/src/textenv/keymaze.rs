//! KeyMaze: a small deterministic room-and-key world loaded from JSON.
//!
//! Grammar: `go <dir>`, `open <obj>`, `take <obj>`, `unlock <door>`, `look`,
//! `help`. An optional leading `the` is accepted before object names.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TextEnv, TextEnvStep, NOTHING_HAPPENS};
use crate::error::{contract, DoraError, Result};

pub const HELP_TEXT: &str =
    "Available commands: go <direction>, open <object>, take <object>, unlock door, look, help.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoomDef {
    pub id: String,
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub exits: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Container,
    Item,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectDef {
    pub id: String,
    pub kind: ObjectKind,
    /// Room the object starts in; `None` for items that start inside a container.
    #[serde(default)]
    pub room: Option<String>,
    pub description: String,
    #[serde(default)]
    pub open: bool,
    #[serde(default)]
    pub contents: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoorDef {
    pub id: String,
    pub room: String,
    pub direction: String,
    pub target: String,
    pub description: String,
    pub key: String,
    #[serde(default = "yes")]
    pub locked: bool,
}

fn yes() -> bool {
    true
}

/// Reward granted the first time an event fires. Events are
/// `take:<item>`, `open:<container>`, `unlock:<door>`, `enter:<room>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardDef {
    pub event: String,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldDef {
    pub name: String,
    pub start_room: String,
    pub goal_room: String,
    pub rooms: Vec<RoomDef>,
    #[serde(default)]
    pub objects: Vec<ObjectDef>,
    #[serde(default)]
    pub doors: Vec<DoorDef>,
    #[serde(default)]
    pub rewards: Vec<RewardDef>,
}

impl WorldDef {
    pub fn builtin() -> Self {
        serde_json::from_str(include_str!("../../worlds/keymaze.json"))
            .expect("built-in world parses")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let world: WorldDef = serde_json::from_str(text)?;
        world.validate()?;
        Ok(world)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DoraError::Config(format!("world file {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(DoraError::Config(format!("world {:?}: {msg}", self.name)));
        let mut rooms = BTreeSet::new();
        for r in &self.rooms {
            if !rooms.insert(r.id.as_str()) {
                return bad(format!("duplicate room {:?}", r.id));
            }
        }
        for id in [&self.start_room, &self.goal_room] {
            if !rooms.contains(id.as_str()) {
                return bad(format!("unknown room {id:?}"));
            }
        }
        for r in &self.rooms {
            for target in r.exits.values() {
                if !rooms.contains(target.as_str()) {
                    return bad(format!("exit from {:?} to unknown room {target:?}", r.id));
                }
            }
        }
        let mut objects = BTreeSet::new();
        for o in &self.objects {
            if !objects.insert(o.id.as_str()) {
                return bad(format!("duplicate object {:?}", o.id));
            }
            if let Some(room) = &o.room {
                if !rooms.contains(room.as_str()) {
                    return bad(format!("object {:?} in unknown room {room:?}", o.id));
                }
            }
        }
        for o in &self.objects {
            for c in &o.contents {
                if !objects.contains(c.as_str()) {
                    return bad(format!("container {:?} holds unknown object {c:?}", o.id));
                }
            }
        }
        for d in &self.doors {
            if !rooms.contains(d.room.as_str()) || !rooms.contains(d.target.as_str()) {
                return bad(format!("door {:?} joins unknown rooms", d.id));
            }
            if !objects.contains(d.key.as_str()) {
                return bad(format!("door {:?} needs unknown key {:?}", d.id, d.key));
            }
        }
        if self.rewards.iter().any(|r| !(r.reward >= 0.0)) {
            return bad("rewards must be non-negative".into());
        }
        Ok(())
    }

    fn max_score(&self) -> f64 {
        self.rewards.iter().map(|r| r.reward).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
struct WorldState {
    room: String,
    inventory: BTreeSet<String>,
    /// Where each object currently is: a room id, a container id, or the inventory.
    location: BTreeMap<String, Place>,
    open: BTreeSet<String>,
    locked: BTreeSet<String>,
    fired: BTreeSet<String>,
    raw_score: f64,
    terminal: bool,
}

#[derive(Debug, Clone, PartialEq)]
enum Place {
    Room(String),
    Inside(String),
    Inventory,
    Nowhere,
}

/// A running KeyMaze instance. One episode at a time.
#[derive(Debug, Clone)]
pub struct KeyMaze {
    world: WorldDef,
    state: WorldState,
}

impl Default for KeyMaze {
    fn default() -> Self {
        Self::new(WorldDef::builtin()).expect("built-in world is valid")
    }
}

impl KeyMaze {
    pub fn new(world: WorldDef) -> Result<Self> {
        world.validate()?;
        let state = Self::initial_state(&world);
        Ok(Self { world, state })
    }

    pub fn world(&self) -> &WorldDef {
        &self.world
    }

    pub fn current_room(&self) -> &str {
        &self.state.room
    }

    pub fn is_terminal(&self) -> bool {
        self.state.terminal
    }

    fn initial_state(world: &WorldDef) -> WorldState {
        let mut location = BTreeMap::new();
        for o in &world.objects {
            let place = match &o.room {
                Some(r) => Place::Room(r.clone()),
                None => Place::Nowhere,
            };
            location.insert(o.id.clone(), place);
        }
        for o in &world.objects {
            for c in &o.contents {
                location.insert(c.clone(), Place::Inside(o.id.clone()));
            }
        }
        WorldState {
            room: world.start_room.clone(),
            inventory: BTreeSet::new(),
            location,
            open: world
                .objects
                .iter()
                .filter(|o| o.open)
                .map(|o| o.id.clone())
                .collect(),
            locked: world
                .doors
                .iter()
                .filter(|d| d.locked)
                .map(|d| d.id.clone())
                .collect(),
            fired: BTreeSet::new(),
            raw_score: 0.0,
            terminal: false,
        }
    }

    fn object(&self, id: &str) -> Option<&ObjectDef> {
        self.world.objects.iter().find(|o| o.id == id)
    }

    fn room(&self, id: &str) -> &RoomDef {
        self.world
            .rooms
            .iter()
            .find(|r| r.id == id)
            .expect("validated room id")
    }

    fn score(&self) -> f64 {
        let max = self.world.max_score();
        if max > 0.0 {
            (self.state.raw_score / max).min(1.0)
        } else {
            0.0
        }
    }

    fn fire(&mut self, event: String) -> f64 {
        if !self.state.fired.insert(event.clone()) {
            return 0.0;
        }
        let reward: f64 = self
            .world
            .rewards
            .iter()
            .filter(|r| r.event == event)
            .map(|r| r.reward)
            .sum();
        self.state.raw_score += reward;
        reward
    }

    /// Objects directly in the current room.
    fn room_objects(&self) -> Vec<&ObjectDef> {
        self.world
            .objects
            .iter()
            .filter(|o| {
                self.state.location.get(&o.id) == Some(&Place::Room(self.state.room.clone()))
            })
            .collect()
    }

    fn contents_of(&self, container: &str) -> Vec<&ObjectDef> {
        self.world
            .objects
            .iter()
            .filter(|o| {
                self.state.location.get(&o.id) == Some(&Place::Inside(container.to_string()))
            })
            .collect()
    }

    fn is_visible(&self, id: &str) -> bool {
        match self.state.location.get(id) {
            Some(Place::Room(r)) => *r == self.state.room,
            Some(Place::Inside(c)) => {
                self.state.open.contains(c)
                    && self.state.location.get(c) == Some(&Place::Room(self.state.room.clone()))
            }
            _ => false,
        }
    }

    fn describe_room(&self) -> String {
        let room = self.room(&self.state.room);
        let mut out = format!("{}\n{}", room.name, room.description);
        for o in self.room_objects() {
            match o.kind {
                ObjectKind::Container if self.state.open.contains(&o.id) => {
                    let inside = self.contents_of(&o.id);
                    if inside.is_empty() {
                        out.push_str(&format!("\nThere is {} here (open, empty).", o.description));
                    } else {
                        let names: Vec<_> = inside.iter().map(|i| i.description.as_str()).collect();
                        out.push_str(&format!(
                            "\nThere is {} here (open). Inside you see {}.",
                            o.description,
                            names.join(", ")
                        ));
                    }
                }
                ObjectKind::Container => {
                    out.push_str(&format!("\nThere is {} here (closed).", o.description))
                }
                ObjectKind::Item => out.push_str(&format!("\nYou see {} here.", o.description)),
            }
        }
        for d in self
            .world
            .doors
            .iter()
            .filter(|d| d.room == self.state.room)
        {
            let state = if self.state.locked.contains(&d.id) {
                "locked"
            } else {
                "unlocked"
            };
            out.push_str(&format!(
                "\n{} leads {} ({state}).",
                capitalize(&d.description),
                d.direction
            ));
        }
        let mut exits: Vec<&str> = room.exits.keys().map(String::as_str).collect();
        for d in self
            .world
            .doors
            .iter()
            .filter(|d| d.room == self.state.room)
        {
            exits.push(&d.direction);
        }
        if exits.is_empty() {
            out.push_str("\nThere are no exits.");
        } else {
            exits.sort_unstable();
            exits.dedup();
            out.push_str(&format!("\nExits: {}.", exits.join(", ")));
        }
        out
    }

    fn go(&mut self, dir: &str) -> (String, f64, bool) {
        let door = self
            .world
            .doors
            .iter()
            .find(|d| d.room == self.state.room && d.direction == dir)
            .cloned();
        let target = if let Some(door) = door {
            if self.state.locked.contains(&door.id) {
                return (
                    format!("{} is locked.", capitalize(&door.description)),
                    0.0,
                    false,
                );
            }
            door.target
        } else {
            match self.room(&self.state.room).exits.get(dir) {
                Some(t) => t.clone(),
                None => return ("You can't go that way.".into(), 0.0, false),
            }
        };
        self.state.room = target.clone();
        let reward = self.fire(format!("enter:{target}"));
        if target == self.world.goal_room {
            self.state.terminal = true;
        }
        (self.describe_room(), reward, true)
    }

    fn open(&mut self, id: &str) -> (String, f64, bool) {
        let Some(obj) = self.object(id).filter(|_| self.is_visible(id)).cloned() else {
            return (format!("You don't see any {id} here."), 0.0, false);
        };
        if obj.kind != ObjectKind::Container {
            return (format!("You can't open {}.", obj.description), 0.0, false);
        }
        if !self.state.open.insert(obj.id.clone()) {
            return (
                format!("{} is already open.", capitalize(&obj.description)),
                0.0,
                false,
            );
        }
        let reward = self.fire(format!("open:{}", obj.id));
        let inside = self.contents_of(&obj.id);
        let text = if inside.is_empty() {
            format!("You open {}. It is empty.", obj.description)
        } else {
            let names: Vec<_> = inside.iter().map(|i| i.description.as_str()).collect();
            format!(
                "You open {}. Inside you see {}.",
                obj.description,
                names.join(", ")
            )
        };
        (text, reward, true)
    }

    fn take(&mut self, id: &str) -> (String, f64, bool) {
        if self.state.inventory.contains(id) {
            return ("You already have that.".into(), 0.0, false);
        }
        let Some(obj) = self.object(id).filter(|_| self.is_visible(id)).cloned() else {
            return (format!("You don't see any {id} here."), 0.0, false);
        };
        if obj.kind != ObjectKind::Item {
            return (format!("You can't take {}.", obj.description), 0.0, false);
        }
        self.state.location.insert(obj.id.clone(), Place::Inventory);
        self.state.inventory.insert(obj.id.clone());
        let reward = self.fire(format!("take:{}", obj.id));
        (format!("Taken: {}.", obj.description), reward, true)
    }

    fn unlock(&mut self, id: &str) -> (String, f64, bool) {
        let Some(door) = self
            .world
            .doors
            .iter()
            .find(|d| d.id == id && d.room == self.state.room)
            .cloned()
        else {
            return (format!("You don't see any {id} here."), 0.0, false);
        };
        if !self.state.locked.contains(&door.id) {
            return (
                format!("{} is already unlocked.", capitalize(&door.description)),
                0.0,
                false,
            );
        }
        if !self.state.inventory.contains(&door.key) {
            return ("You don't have the key.".into(), 0.0, false);
        }
        self.state.locked.remove(&door.id);
        let reward = self.fire(format!("unlock:{}", door.id));
        let key = self
            .object(&door.key)
            .map(|k| k.description.clone())
            .unwrap_or_else(|| door.key.clone());
        (
            format!("You unlock {} with {key}.", door.description),
            reward,
            true,
        )
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn object_arg(rest: &str) -> &str {
    rest.strip_prefix("the ").unwrap_or(rest).trim()
}

impl TextEnv for KeyMaze {
    fn reset(&mut self, _seed: u64) -> String {
        self.state = Self::initial_state(&self.world);
        self.describe_room()
    }

    fn step(&mut self, action: &str) -> Result<TextEnvStep> {
        if self.state.terminal {
            return Err(contract("step after the episode has terminated"));
        }
        let cmd = action.trim();
        let (text, reward, valid) = if cmd == "look" {
            (self.describe_room(), 0.0, true)
        } else if cmd == "help" {
            (HELP_TEXT.to_string(), 0.0, true)
        } else if let Some(dir) = cmd.strip_prefix("go ") {
            self.go(dir.trim())
        } else if let Some(obj) = cmd.strip_prefix("open ") {
            self.open(object_arg(obj))
        } else if let Some(obj) = cmd.strip_prefix("take ") {
            self.take(object_arg(obj))
        } else if let Some(obj) = cmd.strip_prefix("unlock ") {
            self.unlock(object_arg(obj))
        } else {
            (NOTHING_HAPPENS.to_string(), 0.0, false)
        };
        Ok(TextEnvStep {
            observation: text.trim_end().to_string(),
            reward,
            score: self.score(),
            terminal: self.state.terminal,
            valid_action: valid,
        })
    }
}
