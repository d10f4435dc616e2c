//! Global optimization of semi-algebraic functions.
//!
//! A problem built from polynomials with `+ * / min max abs root` is lifted to
//! a polynomial optimization problem in auxiliary variables ([`lift`]), relaxed
//! to a hierarchy of moment semidefinite programs ([`moment`]), solved with an
//! embedded interior-point method ([`sdp`]) and certified by the flat-extension
//! rank test, atom extraction and SOS recovery ([`certify`]). [`oracle`] is an
//! independent brute-force reference used for validation.

pub mod expr;
pub mod poly;
pub mod lift;
pub mod moment;
pub mod sdp;
pub mod certify;
pub mod oracle;
