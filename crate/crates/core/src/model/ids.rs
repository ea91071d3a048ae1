use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::ModelError;

/// Maximum number of person roots; roots live in `[0, MAX_PERSONS)`.
pub const MAX_PERSONS: u32 = 100;
/// First object ID. Everything below is person-derived.
pub const OBJECT_ID_BASE: u32 = 1000;

const PERSON_CODE: u32 = 0;
const LEFT_HAND_CODE: u32 = 1;
const RIGHT_HAND_CODE: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Person,
    LeftHand,
    RightHand,
    Object,
}

impl EntityKind {
    pub fn is_hand(self) -> bool {
        matches!(self, EntityKind::LeftHand | EntityKind::RightHand)
    }
}

/// Person root in `[0, 99]`; the stem of the person/hand ID triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct PersonRoot(u32);

impl PersonRoot {
    pub fn new(root: u32) -> Result<Self, ModelError> {
        if root >= MAX_PERSONS {
            return Err(ModelError::IdRangeExceeded(format!(
                "person root {root} outside [0, {}]",
                MAX_PERSONS - 1
            )));
        }
        Ok(Self(root))
    }

    pub fn get(self) -> u32 {
        self.0
    }

    pub fn person(self) -> EntityId {
        EntityId {
            raw: self.0 * 10 + PERSON_CODE,
            kind: EntityKind::Person,
        }
    }

    pub fn left_hand(self) -> EntityId {
        EntityId {
            raw: self.0 * 10 + LEFT_HAND_CODE,
            kind: EntityKind::LeftHand,
        }
    }

    pub fn right_hand(self) -> EntityId {
        EntityId {
            raw: self.0 * 10 + RIGHT_HAND_CODE,
            kind: EntityKind::RightHand,
        }
    }

    pub fn hand(self, side: HandSide) -> EntityId {
        match side {
            HandSide::Left => self.left_hand(),
            HandSide::Right => self.right_hand(),
        }
    }
}

impl TryFrom<u32> for PersonRoot {
    type Error = ModelError;
    fn try_from(v: u32) -> Result<Self, Self::Error> {
        PersonRoot::new(v)
    }
}

impl From<PersonRoot> for u32 {
    fn from(r: PersonRoot) -> u32 {
        r.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandSide {
    Left,
    Right,
}

/// Tracked entity identifier. The kind is implied by the raw value:
/// `root×10` person, `root×10+1` left hand, `root×10+4` right hand, `≥1000`
/// object. Codes `+2`, `+3` and `+5..+9` are never assigned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId {
    raw: u32,
    kind: EntityKind,
}

impl EntityId {
    pub fn from_raw(raw: u32) -> Result<Self, ModelError> {
        if raw >= OBJECT_ID_BASE {
            return Ok(Self {
                raw,
                kind: EntityKind::Object,
            });
        }
        let kind = match raw % 10 {
            PERSON_CODE => EntityKind::Person,
            LEFT_HAND_CODE => EntityKind::LeftHand,
            RIGHT_HAND_CODE => EntityKind::RightHand,
            code => {
                return Err(ModelError::InvalidEntityId(format!(
                    "{raw}: sub-code {code} is not assigned"
                )))
            }
        };
        Ok(Self { raw, kind })
    }

    pub fn object(index: u32) -> Result<Self, ModelError> {
        let raw = OBJECT_ID_BASE
            .checked_add(index)
            .ok_or_else(|| ModelError::IdRangeExceeded(format!("object index {index} overflows the ID space")))?;
        Ok(Self {
            raw,
            kind: EntityKind::Object,
        })
    }

    pub fn raw(self) -> u32 {
        self.raw
    }

    pub fn kind(self) -> EntityKind {
        self.kind
    }

    /// Owning person root for person and hand IDs.
    pub fn root(self) -> Option<PersonRoot> {
        match self.kind {
            EntityKind::Object => None,
            _ => Some(PersonRoot(self.raw / 10)),
        }
    }

    pub fn hand_side(self) -> Option<HandSide> {
        match self.kind {
            EntityKind::LeftHand => Some(HandSide::Left),
            EntityKind::RightHand => Some(HandSide::Right),
            _ => None,
        }
    }
}

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.raw)
    }
}

impl Serialize for EntityId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u32(self.raw)
    }
}

impl<'de> Deserialize<'de> for EntityId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        EntityId::from_raw(u32::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PersonIds {
    pub root: PersonRoot,
    pub person: EntityId,
    pub left_hand: EntityId,
    pub right_hand: EntityId,
}

impl PersonIds {
    fn of(root: PersonRoot) -> Self {
        Self {
            root,
            person: root.person(),
            left_hand: root.left_hand(),
            right_hand: root.right_hand(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdAssignment {
    pub persons: Vec<PersonIds>,
    pub objects: Vec<EntityId>,
}

impl IdAssignment {
    pub fn all(&self) -> impl Iterator<Item = EntityId> + '_ {
        self.persons
            .iter()
            .flat_map(|p| [p.person, p.left_hand, p.right_hand])
            .chain(self.objects.iter().copied())
    }
}

/// Assigns the person/hand triple to each root and sequential object IDs
/// starting at 1000.
pub fn allocate_entity_ids(person_roots: &[u32], n_objects: u32) -> Result<IdAssignment, ModelError> {
    if person_roots.len() > MAX_PERSONS as usize {
        return Err(ModelError::IdRangeExceeded(format!(
            "{} persons exceed the {MAX_PERSONS}-person ID range",
            person_roots.len()
        )));
    }
    let mut seen = [false; MAX_PERSONS as usize];
    let mut persons = Vec::with_capacity(person_roots.len());
    for &r in person_roots {
        let root = PersonRoot::new(r)?;
        if std::mem::replace(&mut seen[r as usize], true) {
            return Err(ModelError::DuplicateRoot(r));
        }
        persons.push(PersonIds::of(root));
    }
    let mut allocator = ObjectIdAllocator::default();
    let objects = (0..n_objects)
        .map(|_| allocator.next_id())
        .collect::<Result<Vec<_>, _>>()?;
    Ok(IdAssignment { persons, objects })
}

/// Hands out object IDs 1000, 1001, … in allocation order.
#[derive(Debug, Default, Clone)]
pub struct ObjectIdAllocator {
    next: u32,
}

impl ObjectIdAllocator {
    pub fn next_id(&mut self) -> Result<EntityId, ModelError> {
        let id = EntityId::object(self.next)?;
        self.next += 1;
        Ok(id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn single_root_triple() {
        let a = allocate_entity_ids(&[3], 0).unwrap();
        let p = a.persons[0];
        assert_eq!((p.person.raw(), p.left_hand.raw(), p.right_hand.raw()), (30, 31, 34));
        assert!(a.objects.is_empty());
    }

    #[test]
    fn objects_only() {
        let a = allocate_entity_ids(&[], 2).unwrap();
        let raws: Vec<u32> = a.objects.iter().map(|o| o.raw()).collect();
        assert_eq!(raws, vec![1000, 1001]);
    }

    #[test]
    fn extreme_roots() {
        let a = allocate_entity_ids(&[0, 99], 0).unwrap();
        let raws: HashSet<u32> = a.all().map(|e| e.raw()).collect();
        assert_eq!(raws, HashSet::from([0, 1, 4, 990, 991, 994]));
    }

    #[test]
    fn range_errors() {
        assert!(matches!(
            allocate_entity_ids(&[100], 0),
            Err(ModelError::IdRangeExceeded(_))
        ));
        let many: Vec<u32> = (0..101).collect();
        assert!(matches!(
            allocate_entity_ids(&many, 0),
            Err(ModelError::IdRangeExceeded(_))
        ));
        assert!(matches!(
            allocate_entity_ids(&[4, 4], 0),
            Err(ModelError::DuplicateRoot(4))
        ));
    }

    #[test]
    fn raw_roundtrip_and_kinds() {
        for raw in [0, 1, 4, 990, 991, 994, 1000, 5000] {
            let id = EntityId::from_raw(raw).unwrap();
            assert_eq!(id.raw(), raw);
        }
        assert_eq!(EntityId::from_raw(31).unwrap().kind(), EntityKind::LeftHand);
        assert_eq!(EntityId::from_raw(34).unwrap().root().unwrap().get(), 3);
        assert!(EntityId::from_raw(32).is_err());
        assert!(EntityId::from_raw(1000).unwrap().root().is_none());
    }
}
