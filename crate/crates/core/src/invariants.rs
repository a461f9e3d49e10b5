//! Registered differential-invariant sets for the two SO(2) geometries.
//!
//! On the punctured plane the polar rates are recovered from Cartesian jets
//! by the chain rule:
//!
//! ```text
//! rdot      = (x xd + y yd) / r
//! thetadot  = (x yd - y xd) / r^2
//! rddot     = (xd^2 + yd^2 + x xdd + y ydd) / r - rdot^2 / r
//! thetaddot = (x ydd - y xdd) / r^2 - 2 rdot thetadot / r
//! ```

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::jet::{InvariantFn, JetPoint};
use crate::manifold::Geometry;

#[derive(Debug, Clone)]
pub struct InvariantSet {
    pub geometry: Geometry,
    pub order: usize,
    pub members: Vec<InvariantFn>,
}

/// Identifier of a registered set, e.g. `r2-so2-order1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SetLabel {
    pub geometry: Geometry,
    pub order: usize,
}

impl fmt::Display for SetLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-order{}", self.geometry, self.order)
    }
}

impl FromStr for SetLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("malformed invariant set label {s:?}"));
        let (geo, order) = s.rsplit_once("-order").ok_or_else(bad)?;
        let order: usize = order.parse().map_err(|_| bad())?;
        Ok(SetLabel {
            geometry: geo.parse()?,
            order,
        })
    }
}

/// Polar quantities of a Cartesian jet on the punctured plane.
#[derive(Debug, Clone, Copy)]
pub struct PolarJet {
    pub r: f64,
    pub rdot: f64,
    pub thetadot: f64,
    pub rddot: f64,
    pub thetaddot: f64,
}

impl PolarJet {
    pub fn from_cartesian(jet: &JetPoint) -> Self {
        let [x, y] = jet.u;
        let [xd, yd] = jet.du;
        let [xdd, ydd] = jet.ddu_or_zero();
        let r = x.hypot(y);
        let rdot = (x * xd + y * yd) / r;
        let thetadot = (x * yd - y * xd) / (r * r);
        let rddot = (xd * xd + yd * yd + x * xdd + y * ydd) / r - rdot * rdot / r;
        let thetaddot = (x * ydd - y * xdd) / (r * r) - 2.0 * rdot * thetadot / r;
        PolarJet {
            r,
            rdot,
            thetadot,
            rddot,
            thetaddot,
        }
    }
}

fn time() -> InvariantFn {
    InvariantFn::new("t", 1, |j| j.t)
}

fn r2_members(order: usize) -> Vec<InvariantFn> {
    let mut m = vec![
        time(),
        InvariantFn::new("r", 1, |j| j.u[0].hypot(j.u[1])),
        InvariantFn::new("r*rdot", 1, |j| j.u[0] * j.du[0] + j.u[1] * j.du[1]),
        InvariantFn::new("r^2*thetadot", 1, |j| j.u[0] * j.du[1] - j.u[1] * j.du[0]),
    ];
    if order >= 2 {
        m.push(InvariantFn::new("r^3*rddot", 2, |j| {
            let p = PolarJet::from_cartesian(j);
            p.r.powi(3) * p.rddot
        }));
        m.push(InvariantFn::new("r^4*thetaddot", 2, |j| {
            let p = PolarJet::from_cartesian(j);
            p.r.powi(4) * p.thetaddot
        }));
    }
    m
}

fn s2_members(order: usize) -> Vec<InvariantFn> {
    let mut m = vec![
        time(),
        InvariantFn::new("theta", 1, |j| j.u[0]),
        InvariantFn::new("thetadot", 1, |j| j.du[0]),
        InvariantFn::new("phidot", 1, |j| j.du[1]),
    ];
    if order >= 2 {
        m.push(InvariantFn::new("thetaddot", 2, |j| j.ddu_or_zero()[0]));
        m.push(InvariantFn::new("phiddot", 2, |j| j.ddu_or_zero()[1]));
    }
    m
}

/// Looks up the invariant set for `(geometry, order)`.
pub fn registry(geometry: Geometry, order: usize) -> Result<InvariantSet> {
    let members = match (geometry, order) {
        (Geometry::R2Punctured, 1 | 2) => r2_members(order),
        (Geometry::Sphere2, 1 | 2) => s2_members(order),
        _ => {
            return Err(Error::UnsupportedGeometry {
                geometry: geometry.to_string(),
                order,
            })
        }
    };
    Ok(InvariantSet {
        geometry,
        order,
        members,
    })
}

impl InvariantSet {
    pub fn mu(&self) -> usize {
        self.members.len()
    }

    pub fn label(&self) -> SetLabel {
        SetLabel {
            geometry: self.geometry,
            order: self.order,
        }
    }

    pub fn member_labels(&self) -> Vec<&str> {
        self.members.iter().map(|m| m.label.as_str()).collect()
    }

    pub fn evaluate(&self, jet: &JetPoint) -> Result<Vec<f64>> {
        if jet.order() < self.order {
            return Err(Error::Shape(format!(
                "set {} needs a jet of order {}",
                self.label(),
                self.order
            )));
        }
        self.geometry.guard(&jet.u)?;
        Ok(self.members.iter().map(|m| m.eval(jet)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jet::{check_invariance, prolonged_action, sample_jet};
    use crate::manifold::GroupElement;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const R2: Geometry = Geometry::R2Punctured;
    const S2: Geometry = Geometry::Sphere2;

    fn assert_vec_close(a: &[f64], b: &[f64], tol: f64) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < tol, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn registry_counts() {
        assert_eq!(registry(R2, 1).unwrap().mu(), 4);
        assert_eq!(registry(R2, 2).unwrap().mu(), 6);
        assert_eq!(
            registry(S2, 1).unwrap().member_labels(),
            ["t", "theta", "thetadot", "phidot"]
        );
        assert_eq!(registry(S2, 2).unwrap().mu(), 6);
        assert!(matches!(
            registry(R2, 3),
            Err(Error::UnsupportedGeometry { .. })
        ));
        for g in Geometry::ALL {
            for order in 1..=2 {
                assert_eq!(registry(g, order).unwrap().members[0].label, "t");
            }
        }
    }

    #[test]
    fn labels_round_trip() {
        let label = registry(R2, 1).unwrap().label();
        assert_eq!(label.to_string(), "r2-so2-order1");
        assert_eq!("s2-so2-order2".parse::<SetLabel>().unwrap().order, 2);
        assert!("r2-so2".parse::<SetLabel>().is_err());
    }

    #[test]
    fn evaluate_examples() {
        let set = registry(R2, 1).unwrap();
        let v = set
            .evaluate(&JetPoint::first(0.0, [1.0, 2.0], [3.0, 4.0]))
            .unwrap();
        assert_vec_close(&v, &[0.0, 5f64.sqrt(), 11.0, -2.0], 1e-14);

        let set = registry(R2, 2).unwrap();
        let v = set
            .evaluate(&JetPoint::second(0.0, [1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]))
            .unwrap();
        assert_vec_close(&v, &[0.0, 1.0, 0.0, 1.0, 0.0, 0.0], 1e-14);
        let v = set
            .evaluate(&JetPoint::second(0.0, [1.0, 0.0], [0.0, 0.0], [1.0, 0.0]))
            .unwrap();
        assert_vec_close(&v, &[0.0, 1.0, 0.0, 0.0, 1.0, 0.0], 1e-14);

        assert!(set
            .evaluate(&JetPoint::first(0.0, [1.0, 0.0], [0.0, 0.0]))
            .is_err());
        assert!(set
            .evaluate(&JetPoint::second(0.0, [0.0, 0.0], [0.0, 0.0], [1.0, 0.0]))
            .is_err());
    }

    #[test]
    fn rotation_invariance_of_all_sets() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for g in Geometry::ALL {
            for order in 1..=2 {
                let set = registry(g, order).unwrap();
                for _ in 0..1000 {
                    let jet = sample_jet(g, order, &mut rng);
                    let eps = GroupElement(rng.gen_range(-PI..PI));
                    let a = set.evaluate(&jet).unwrap();
                    let b = set
                        .evaluate(&prolonged_action(g, eps, &jet).unwrap())
                        .unwrap();
                    assert_vec_close(&a, &b, 1e-9);
                }
            }
        }
    }

    #[test]
    fn registered_sets_pass_invariance_check() {
        for g in Geometry::ALL {
            for order in 1..=2 {
                let set = registry(g, order).unwrap();
                let report = check_invariance(g, &set.members, order, 300, 1e-6, 11).unwrap();
                assert!(report.pass, "{}: {:?}", set.label(), report.worst);
            }
        }
    }

    // Polar rates from the chain rule agree with differentiating r(t) and
    // theta(t) numerically along a smooth curve.
    #[test]
    fn chain_rule_matches_polar_finite_differences() {
        let curve = |t: f64| -> [f64; 2] {
            [
                1.3 + 0.5 * t + 0.2 * (2.0 * t).sin(),
                -0.4 + 0.8 * t * t - 0.3 * t.cos(),
            ]
        };
        let polar = |t: f64| {
            let [x, y] = curve(t);
            (x.hypot(y), y.atan2(x))
        };
        let h = 1e-3;
        for k in 0..20 {
            let t = -0.5 + 0.05 * k as f64;
            let d = |f: &dyn Fn(f64) -> [f64; 2]| {
                let p = f(t + h);
                let m = f(t - h);
                [(p[0] - m[0]) / (2.0 * h), (p[1] - m[1]) / (2.0 * h)]
            };
            let u = curve(t);
            let du = d(&curve);
            let ddu = {
                let p = curve(t + h);
                let m = curve(t - h);
                [
                    (p[0] - 2.0 * u[0] + m[0]) / (h * h),
                    (p[1] - 2.0 * u[1] + m[1]) / (h * h),
                ]
            };
            // exact derivatives of the curve
            let du_exact = [0.5 + 0.4 * (2.0 * t).cos(), 1.6 * t + 0.3 * t.sin()];
            let ddu_exact = [-0.8 * (2.0 * t).sin(), 1.6 + 0.3 * t.cos()];
            assert_vec_close(&du, &du_exact, 1e-5);
            assert_vec_close(&ddu, &ddu_exact, 1e-5);

            let pj = PolarJet::from_cartesian(&JetPoint::second(t, u, du_exact, ddu_exact));
            let hh = 1e-4;
            let (rp, ap) = polar(t + hh);
            let (r0, a0) = polar(t);
            let (rm, am) = polar(t - hh);
            assert!((pj.r - r0).abs() < 1e-12);
            assert!((pj.rdot - (rp - rm) / (2.0 * hh)).abs() < 1e-5);
            assert!((pj.thetadot - (ap - am) / (2.0 * hh)).abs() < 1e-5);
            assert!((pj.rddot - (rp - 2.0 * r0 + rm) / (hh * hh)).abs() < 1e-5);
            assert!((pj.thetaddot - (ap - 2.0 * a0 + am) / (hh * hh)).abs() < 1e-5);
        }
    }
}
