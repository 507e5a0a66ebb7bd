//! Versioned binary model format (magic "TCML1").
//!
//! Layout: magic, version byte, kind byte, schema hash, seed, class list,
//! then a kind-specific payload. All integers little-endian, floats as IEEE
//! bit patterns, so serialization is byte-deterministic.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};

use super::engine::{ClassTree, RegTree, TreeNode};
use super::{EnsembleModel, GbmModel, Model, ModelPayload};

const MAGIC: &[u8; 5] = b"TCML1";
const VERSION: u8 = 1;

fn kind_code(m: &Model) -> u8 {
    match m.payload {
        ModelPayload::Tree(_) => 0,
        ModelPayload::Forest(_) => 1,
        ModelPayload::Gbm(_) => 2,
        ModelPayload::Ensemble(_) => 3,
    }
}

fn write_nodes(w: &mut impl Write, nodes: &[TreeNode]) -> Result<()> {
    w.write_u32::<LittleEndian>(nodes.len() as u32)?;
    for node in nodes {
        match node {
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                w.write_u8(0)?;
                w.write_u32::<LittleEndian>(*feature)?;
                w.write_f64::<LittleEndian>(*threshold)?;
                w.write_u32::<LittleEndian>(*left)?;
                w.write_u32::<LittleEndian>(*right)?;
            }
            TreeNode::Leaf { payload } => {
                w.write_u8(1)?;
                w.write_u32::<LittleEndian>(*payload)?;
            }
        }
    }
    Ok(())
}

fn read_nodes(r: &mut impl Read) -> Result<Vec<TreeNode>> {
    let n = r.read_u32::<LittleEndian>()? as usize;
    let mut nodes = Vec::with_capacity(n);
    for _ in 0..n {
        match r.read_u8()? {
            0 => nodes.push(TreeNode::Split {
                feature: r.read_u32::<LittleEndian>()?,
                threshold: r.read_f64::<LittleEndian>()?,
                left: r.read_u32::<LittleEndian>()?,
                right: r.read_u32::<LittleEndian>()?,
            }),
            1 => nodes.push(TreeNode::Leaf {
                payload: r.read_u32::<LittleEndian>()?,
            }),
            t => return Err(Error::Format(format!("unknown node tag {t}"))),
        }
    }
    Ok(nodes)
}

fn write_f64s(w: &mut impl Write, values: &[f64]) -> Result<()> {
    w.write_u32::<LittleEndian>(values.len() as u32)?;
    for &v in values {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_f64s(r: &mut impl Read) -> Result<Vec<f64>> {
    let n = r.read_u32::<LittleEndian>()? as usize;
    let mut out = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut out)?;
    Ok(out)
}

fn write_class_tree(w: &mut impl Write, tree: &ClassTree) -> Result<()> {
    write_nodes(w, &tree.nodes)?;
    w.write_u32::<LittleEndian>(tree.n_classes as u32)?;
    write_f64s(w, &tree.leaf_probs)
}

fn read_class_tree(r: &mut impl Read) -> Result<ClassTree> {
    let nodes = read_nodes(r)?;
    let n_classes = r.read_u32::<LittleEndian>()? as usize;
    let leaf_probs = read_f64s(r)?;
    Ok(ClassTree {
        nodes,
        n_classes,
        leaf_probs,
    })
}

fn write_reg_tree(w: &mut impl Write, tree: &RegTree) -> Result<()> {
    write_nodes(w, &tree.nodes)?;
    write_f64s(w, &tree.leaf_values)
}

fn read_reg_tree(r: &mut impl Read) -> Result<RegTree> {
    Ok(RegTree {
        nodes: read_nodes(r)?,
        leaf_values: read_f64s(r)?,
    })
}

fn write_frame(w: &mut impl Write, model: &Model) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u8(VERSION)?;
    w.write_u8(kind_code(model))?;
    w.write_u64::<LittleEndian>(model.schema_hash)?;
    w.write_u64::<LittleEndian>(model.seed)?;
    w.write_u8(model.classes.len() as u8)?;
    w.write_all(&model.classes)?;
    match &model.payload {
        ModelPayload::Tree(tree) => write_class_tree(w, tree)?,
        ModelPayload::Forest(trees) => {
            w.write_u32::<LittleEndian>(trees.len() as u32)?;
            for t in trees {
                write_class_tree(w, t)?;
            }
        }
        ModelPayload::Gbm(gbm) => {
            w.write_f64::<LittleEndian>(gbm.learning_rate)?;
            w.write_u32::<LittleEndian>(gbm.n_classes as u32)?;
            w.write_u32::<LittleEndian>(gbm.trees.len() as u32)?;
            for t in &gbm.trees {
                write_reg_tree(w, t)?;
            }
            write_f64s(w, &gbm.loss_curve)?;
        }
        ModelPayload::Ensemble(ens) => {
            w.write_u32::<LittleEndian>(ens.members.len() as u32)?;
            for m in &ens.members {
                write_frame(w, m)?;
            }
            write_f64s(w, &ens.weights)?;
        }
    }
    Ok(())
}

fn read_frame(r: &mut impl Read) -> Result<Model> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("file too short for TCML1 magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}, expected TCML1", magic)));
    }
    let version = r.read_u8()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let kind = r.read_u8()?;
    let schema_hash = r.read_u64::<LittleEndian>()?;
    let seed = r.read_u64::<LittleEndian>()?;
    let n_classes = r.read_u8()? as usize;
    let mut classes = vec![0u8; n_classes];
    r.read_exact(&mut classes)?;
    let payload = match kind {
        0 => ModelPayload::Tree(read_class_tree(r)?),
        1 => {
            let n = r.read_u32::<LittleEndian>()? as usize;
            let mut trees = Vec::with_capacity(n);
            for _ in 0..n {
                trees.push(read_class_tree(r)?);
            }
            ModelPayload::Forest(trees)
        }
        2 => {
            let learning_rate = r.read_f64::<LittleEndian>()?;
            let k = r.read_u32::<LittleEndian>()? as usize;
            let n = r.read_u32::<LittleEndian>()? as usize;
            let mut trees = Vec::with_capacity(n);
            for _ in 0..n {
                trees.push(read_reg_tree(r)?);
            }
            let loss_curve = read_f64s(r)?;
            ModelPayload::Gbm(GbmModel {
                n_classes: k,
                learning_rate,
                trees,
                loss_curve,
            })
        }
        3 => {
            let n = r.read_u32::<LittleEndian>()? as usize;
            let mut members = Vec::with_capacity(n);
            for _ in 0..n {
                members.push(read_frame(r)?);
            }
            let weights = read_f64s(r)?;
            if weights.len() != members.len() {
                return Err(Error::Format(
                    "ensemble weight count differs from member count".into(),
                ));
            }
            ModelPayload::Ensemble(EnsembleModel { members, weights })
        }
        k => return Err(Error::Format(format!("unknown model kind {k}"))),
    };
    Ok(Model {
        classes,
        schema_hash,
        seed,
        payload,
    })
}

/// Serializes a model to bytes; the same model always yields the same bytes.
pub fn model_to_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    write_frame(&mut out, model).expect("writing to a Vec cannot fail");
    out
}

/// Writes a model file.
pub fn write_model(model: &Model, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_frame(&mut w, model)?;
    w.flush()?;
    Ok(())
}

/// Reads a model file.
pub fn read_model(path: &Path) -> Result<Model> {
    let mut r = BufReader::new(File::open(path)?);
    let model = read_frame(&mut r)?;
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::Format("trailing bytes after model payload".into()));
    }
    Ok(model)
}
