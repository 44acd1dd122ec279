//! Interned triple store with a forward adjacency index.
//!
//! Entities and relations are interned in first-occurrence order, so the same
//! file bytes always produce the same ids. Literal tails (quoted strings or
//! numbers) share the entity table and carry a flag. Edges are followed in
//! stored direction only; inverse relations must be present in the input.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntityId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RelationId(pub u32);

#[derive(Clone, Debug, Default)]
struct Interner {
    labels: Vec<String>,
    index: HashMap<String, u32>,
}

impl Interner {
    fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len() as u32;
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), id);
        id
    }

    fn get(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    fn label(&self, id: u32) -> Option<&str> {
        self.labels.get(id as usize).map(String::as_str)
    }

    fn len(&self) -> usize {
        self.labels.len()
    }
}

/// A tail that is a quoted string or parses as a number.
fn looks_literal(label: &str) -> bool {
    (label.len() >= 2 && label.starts_with('"') && label.ends_with('"'))
        || label.parse::<f64>().is_ok()
}

/// Accumulates triples; `build` freezes them into an immutable [`TripleStore`].
#[derive(Debug, Default)]
pub struct TripleStoreBuilder {
    entities: Interner,
    literal: Vec<bool>,
    relations: Interner,
    seen: HashSet<(u32, u32, u32)>,
    triples: Vec<(EntityId, RelationId, EntityId)>,
}

impl TripleStoreBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn entity(&mut self, label: &str, as_tail: bool) -> EntityId {
        let id = self.entities.intern(label);
        if id as usize == self.literal.len() {
            self.literal.push(as_tail && looks_literal(label));
        } else if !as_tail {
            self.literal[id as usize] = false;
        }
        EntityId(id)
    }

    /// Adds a triple; returns `false` if it was already present.
    pub fn add(&mut self, head: &str, relation: &str, tail: &str) -> bool {
        let h = self.entity(head, false);
        let r = RelationId(self.relations.intern(relation));
        let t = self.entity(tail, true);
        if self.seen.insert((h.0, r.0, t.0)) {
            self.triples.push((h, r, t));
            true
        } else {
            false
        }
    }

    /// Interns an entity without adding an edge (isolated nodes).
    pub fn add_entity(&mut self, label: &str) -> EntityId {
        self.entity(label, false)
    }

    pub fn build(self) -> TripleStore {
        let mut adjacency: HashMap<(EntityId, RelationId), Vec<EntityId>> = HashMap::new();
        let mut outgoing: Vec<Vec<RelationId>> = vec![Vec::new(); self.entities.len()];
        for &(h, r, t) in &self.triples {
            adjacency.entry((h, r)).or_default().push(t);
            outgoing[h.0 as usize].push(r);
        }
        for tails in adjacency.values_mut() {
            tails.sort_unstable();
        }
        for rels in &mut outgoing {
            rels.sort_unstable();
            rels.dedup();
        }
        TripleStore {
            entities: self.entities,
            literal: self.literal,
            relations: self.relations,
            triples: self.triples,
            adjacency,
            outgoing,
        }
    }
}

/// The knowledge graph. Immutable once built and safe to share across threads.
#[derive(Debug, Clone)]
pub struct TripleStore {
    entities: Interner,
    literal: Vec<bool>,
    relations: Interner,
    triples: Vec<(EntityId, RelationId, EntityId)>,
    adjacency: HashMap<(EntityId, RelationId), Vec<EntityId>>,
    outgoing: Vec<Vec<RelationId>>,
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"PMILKG\0\x01";
pub const SNAPSHOT_VERSION: u32 = 1;

impl TripleStore {
    /// Parses `head<TAB>relation<TAB>tail` lines. Blank lines are skipped and
    /// duplicate lines collapse to one triple.
    pub fn load_triples<R: BufRead>(reader: R) -> Result<TripleStore> {
        let mut builder = TripleStoreBuilder::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse {
                context: "triple file".into(),
                line: idx + 1,
                message: e.to_string(),
            })?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    context: "triple file".into(),
                    line: idx + 1,
                    message: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            builder.add(fields[0], fields[1], fields[2]);
        }
        let store = builder.build();
        log::info!(
            "loaded {} unique triples ({} entities, {} relations)",
            store.num_triples(),
            store.num_entities(),
            store.num_relations()
        );
        Ok(store)
    }

    pub fn load_path(path: &std::path::Path) -> Result<TripleStore> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::load_triples(std::io::BufReader::new(file))
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    pub fn num_triples(&self) -> usize {
        self.triples.len()
    }

    pub fn triples(&self) -> &[(EntityId, RelationId, EntityId)] {
        &self.triples
    }

    pub fn entity(&self, label: &str) -> Option<EntityId> {
        self.entities.get(label).map(EntityId)
    }

    pub fn relation(&self, label: &str) -> Option<RelationId> {
        self.relations.get(label).map(RelationId)
    }

    pub fn entity_label(&self, id: EntityId) -> Result<&str> {
        self.entities.label(id.0).ok_or(Error::UnknownEntity(id.0))
    }

    pub fn relation_label(&self, id: RelationId) -> Result<&str> {
        self.relations.label(id.0).ok_or(Error::UnknownRelation(id.0))
    }

    pub fn is_literal(&self, id: EntityId) -> Result<bool> {
        self.literal
            .get(id.0 as usize)
            .copied()
            .ok_or(Error::UnknownEntity(id.0))
    }

    pub fn relation_ids(&self) -> impl Iterator<Item = RelationId> {
        (0..self.relations.len() as u32).map(RelationId)
    }

    pub fn entity_ids(&self) -> impl Iterator<Item = EntityId> {
        (0..self.entities.len() as u32).map(EntityId)
    }

    fn check_entity(&self, e: EntityId) -> Result<()> {
        if (e.0 as usize) < self.entities.len() {
            Ok(())
        } else {
            Err(Error::UnknownEntity(e.0))
        }
    }

    fn check_relation(&self, r: RelationId) -> Result<()> {
        if (r.0 as usize) < self.relations.len() {
            Ok(())
        } else {
            Err(Error::UnknownRelation(r.0))
        }
    }

    /// Sorted tails `t` with `(e, r, t)` in the store. Empty when no edge.
    pub fn neighbors(&self, e: EntityId, r: RelationId) -> Result<&[EntityId]> {
        self.check_entity(e)?;
        self.check_relation(r)?;
        Ok(self.adjacency.get(&(e, r)).map(Vec::as_slice).unwrap_or(&[]))
    }

    /// Sorted relations leaving `e`.
    pub fn outgoing_relations(&self, e: EntityId) -> Result<&[RelationId]> {
        self.check_entity(e)?;
        Ok(&self.outgoing[e.0 as usize])
    }

    /// Writes the binary snapshot: magic, version, metadata blob, tables, triples.
    pub fn write_snapshot<W: Write>(&self, mut w: W, metadata: &str) -> std::io::Result<()> {
        w.write_all(SNAPSHOT_MAGIC)?;
        w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
        write_bytes(&mut w, metadata.as_bytes())?;
        w.write_all(&(self.entities.len() as u32).to_le_bytes())?;
        for (label, &lit) in self.entities.labels.iter().zip(&self.literal) {
            w.write_all(&[lit as u8])?;
            write_bytes(&mut w, label.as_bytes())?;
        }
        w.write_all(&(self.relations.len() as u32).to_le_bytes())?;
        for label in &self.relations.labels {
            write_bytes(&mut w, label.as_bytes())?;
        }
        w.write_all(&(self.triples.len() as u32).to_le_bytes())?;
        for &(h, r, t) in &self.triples {
            w.write_all(&h.0.to_le_bytes())?;
            w.write_all(&r.0.to_le_bytes())?;
            w.write_all(&t.0.to_le_bytes())?;
        }
        w.flush()
    }

    /// Reads a snapshot, returning the store and its metadata blob.
    pub fn read_snapshot<R: Read>(mut r: R) -> std::result::Result<(TripleStore, String), String> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|e| e.to_string())?;
        if &magic != SNAPSHOT_MAGIC {
            return Err("not a store snapshot (bad magic)".into());
        }
        let version = read_u32(&mut r)?;
        if version != SNAPSHOT_VERSION {
            return Err(format!(
                "snapshot format version {version}, expected {SNAPSHOT_VERSION}"
            ));
        }
        let metadata = read_string(&mut r)?;
        let n_entities = read_u32(&mut r)? as usize;
        let mut entities = Interner::default();
        let mut literal = Vec::with_capacity(n_entities);
        for _ in 0..n_entities {
            let mut flag = [0u8; 1];
            r.read_exact(&mut flag).map_err(|e| e.to_string())?;
            entities.intern(&read_string(&mut r)?);
            literal.push(flag[0] != 0);
        }
        let n_relations = read_u32(&mut r)? as usize;
        let mut relations = Interner::default();
        for _ in 0..n_relations {
            relations.intern(&read_string(&mut r)?);
        }
        if entities.len() != n_entities || relations.len() != n_relations {
            return Err("duplicate labels in snapshot tables".into());
        }
        let n_triples = read_u32(&mut r)? as usize;
        let mut builder = TripleStoreBuilder {
            entities,
            literal,
            relations,
            ..Default::default()
        };
        for _ in 0..n_triples {
            let h = read_u32(&mut r)?;
            let rel = read_u32(&mut r)?;
            let t = read_u32(&mut r)?;
            if h as usize >= n_entities || t as usize >= n_entities || rel as usize >= n_relations {
                return Err("triple references an id outside the tables".into());
            }
            if builder.seen.insert((h, rel, t)) {
                builder
                    .triples
                    .push((EntityId(h), RelationId(rel), EntityId(t)));
            }
        }
        Ok((builder.build(), metadata))
    }
}

fn write_bytes<W: Write>(w: &mut W, bytes: &[u8]) -> std::io::Result<()> {
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(bytes)
}

fn read_u32<R: Read>(r: &mut R) -> std::result::Result<u32, String> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|e| e.to_string())?;
    Ok(u32::from_le_bytes(buf))
}

fn read_string<R: Read>(r: &mut R) -> std::result::Result<String, String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|e| e.to_string())?;
    String::from_utf8(buf).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sports_graph() -> TripleStore {
        TripleStore::load_triples(
            "LeBron James\tparent\tBronny James\nBronny James\tplay_for\tLos Angeles Lakers\n"
                .as_bytes(),
        )
        .unwrap()
    }

    #[test]
    fn single_line() {
        let s = TripleStore::load_triples("LeBron James\tparent\tBronny James".as_bytes()).unwrap();
        assert_eq!((s.num_entities(), s.num_relations(), s.num_triples()), (2, 1, 1));
    }

    #[test]
    fn duplicate_lines_dedup() {
        let s = TripleStore::load_triples("a\tr\tb\na\tr\tb\n".as_bytes()).unwrap();
        assert_eq!(s.num_triples(), 1);
    }

    #[test]
    fn empty_file_is_valid() {
        let s = TripleStore::load_triples("".as_bytes()).unwrap();
        assert_eq!(s.num_triples(), 0);
    }

    #[test]
    fn malformed_line_names_line_number() {
        let err = TripleStore::load_triples("a\tr\tb\nbroken line\n".as_bytes()).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn sports_neighbors_and_outgoing() {
        let s = sports_graph();
        let lebron = s.entity("LeBron James").unwrap();
        let parent = s.relation("parent").unwrap();
        let tails = s.neighbors(lebron, parent).unwrap();
        assert_eq!(tails.len(), 1);
        assert_eq!(s.entity_label(tails[0]).unwrap(), "Bronny James");
        assert_eq!(s.outgoing_relations(lebron).unwrap(), &[parent]);
        let play_for = s.relation("play_for").unwrap();
        assert!(s.neighbors(lebron, play_for).unwrap().is_empty());
    }

    #[test]
    fn isolated_entity_has_no_relations() {
        let mut b = TripleStoreBuilder::new();
        b.add("a", "r", "b");
        let lonely = b.add_entity("lonely");
        let s = b.build();
        assert!(s.outgoing_relations(lonely).unwrap().is_empty());
    }

    #[test]
    fn unknown_ids_are_errors() {
        let s = sports_graph();
        assert!(matches!(
            s.neighbors(EntityId(99), RelationId(0)),
            Err(Error::UnknownEntity(99))
        ));
        assert!(matches!(
            s.neighbors(EntityId(0), RelationId(7)),
            Err(Error::UnknownRelation(7))
        ));
        assert!(s.outgoing_relations(EntityId(3)).is_err());
    }

    #[test]
    fn literal_flag() {
        let s = TripleStore::load_triples("m\tyear\t1999\nm\ttitle\t\"Matrix\"\nm\tby\tx\n".as_bytes())
            .unwrap();
        assert!(s.is_literal(s.entity("1999").unwrap()).unwrap());
        assert!(s.is_literal(s.entity("\"Matrix\"").unwrap()).unwrap());
        assert!(!s.is_literal(s.entity("x").unwrap()).unwrap());
        assert!(!s.is_literal(s.entity("m").unwrap()).unwrap());
    }

    #[test]
    fn snapshot_round_trip_preserves_ids() {
        let s = sports_graph();
        let mut buf = Vec::new();
        s.write_snapshot(&mut buf, "meta").unwrap();
        let (back, meta) = TripleStore::read_snapshot(buf.as_slice()).unwrap();
        assert_eq!(meta, "meta");
        assert_eq!(back.triples(), s.triples());
        for id in s.entity_ids() {
            assert_eq!(back.entity_label(id).unwrap(), s.entity_label(id).unwrap());
        }
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(TripleStore::read_snapshot(bad.as_slice()).is_err());
    }
}
