//! Open-world compositional zero-shot learning on procedurally generated
//! attribute-object images: a dual-modality transformer with top-K text
//! candidate selection, a sparse pair-composition head, embedding-based
//! feasibility masking, and bias-swept open-world evaluation.

pub mod data;
pub mod tensor;
