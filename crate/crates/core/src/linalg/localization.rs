//! Gaspari–Cohn covariance localization on cyclic index domains.

use crate::{Error, Matrix, Real, Result};

/// Fifth-order piecewise-rational Gaspari–Cohn taper.
///
/// `radius` is the half-support `c`: the value is 1 at distance 0 and
/// vanishes for `distance ≥ 2c`.
pub fn gaspari_cohn<T: Real>(distance: T, radius: T) -> Result<T> {
    if !(distance >= T::zero()) {
        return Err(Error::invalid("Gaspari-Cohn distance must be non-negative"));
    }
    if !(radius > T::zero()) {
        return Err(Error::invalid("Gaspari-Cohn radius must be positive"));
    }
    Ok(gc_unchecked(distance / radius))
}

fn gc_unchecked<T: Real>(z: T) -> T {
    let l = T::lit;
    if z <= T::one() {
        let z2 = z * z;
        let z3 = z2 * z;
        let z4 = z3 * z;
        let z5 = z4 * z;
        l(-0.25) * z5 + l(0.5) * z4 + l(0.625) * z3 - l(5.0 / 3.0) * z2 + T::one()
    } else if z < l(2.0) {
        let z2 = z * z;
        let z3 = z2 * z;
        let z4 = z3 * z;
        let z5 = z4 * z;
        let v = z5 / l(12.0) - l(0.5) * z4 + l(0.625) * z3 + l(5.0 / 3.0) * z2 - l(5.0) * z
            + l(4.0)
            - l(2.0) / (l(3.0) * z);
        v.max(T::zero())
    } else {
        T::zero()
    }
}

/// Distance between `i` and `j` on a ring of `len` sites.
pub fn cyclic_distance(i: usize, j: usize, len: usize) -> usize {
    let d = i.abs_diff(j);
    d.min(len - d)
}

/// One class of state variables living on its own cyclic ring.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableClass<T> {
    /// Gaspari–Cohn half-support in ring-index units; `None` disables the taper.
    pub radius: Option<T>,
    /// Ring length.
    pub ring: usize,
}

/// How entries between different classes are tapered.
#[derive(Debug, Clone, PartialEq)]
pub enum CrossClassRule {
    /// Classes are uncorrelated after localization (block-diagonal taper).
    Independent,
    /// Every site of a non-parent class hangs off a parent-class site. Any
    /// pair that involves a child site is tapered with the parent class'
    /// function at the distance between the two parents, so a child and its
    /// own parent get weight 1 and children of the same parent weight 1.
    ParentTaper { parent_class: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationSpec<T> {
    pub classes: Vec<VariableClass<T>>,
    pub cross: CrossClassRule,
}

/// Placement of one state index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Site {
    pub class: usize,
    /// Position on the class ring.
    pub position: usize,
    /// Position of the parent site on the parent ring (child classes only).
    pub parent: Option<usize>,
}

impl<T: Real> LocalizationSpec<T> {
    /// One cyclic class of `n` sites; returns the spec and its layout.
    pub fn single_ring(n: usize, radius: Option<T>) -> (Self, Vec<Site>) {
        let spec = LocalizationSpec {
            classes: vec![VariableClass { radius, ring: n }],
            cross: CrossClassRule::Independent,
        };
        let layout = (0..n)
            .map(|i| Site {
                class: 0,
                position: i,
                parent: None,
            })
            .collect();
        (spec, layout)
    }

    /// Two-scale Lorenz96 layout: `large` x-sites followed by `per_large`
    /// column blocks of y-sites (the column-stacked layout of the model).
    ///
    /// `y_radius` is kept on the y class for the independent rule; under
    /// [`CrossClassRule::ParentTaper`] y-pairs use the x taper.
    pub fn two_scale(
        large: usize,
        per_large: usize,
        x_radius: Option<T>,
        y_radius: Option<T>,
    ) -> (Self, Vec<Site>) {
        let spec = LocalizationSpec {
            classes: vec![
                VariableClass {
                    radius: x_radius,
                    ring: large,
                },
                VariableClass {
                    radius: y_radius,
                    ring: large * per_large,
                },
            ],
            cross: CrossClassRule::ParentTaper { parent_class: 0 },
        };
        let mut layout: Vec<Site> = (0..large)
            .map(|i| Site {
                class: 0,
                position: i,
                parent: None,
            })
            .collect();
        for j in 0..per_large {
            for i in 0..large {
                layout.push(Site {
                    class: 1,
                    position: i * per_large + j,
                    parent: Some(i),
                });
            }
        }
        (spec, layout)
    }

    fn taper(&self, class: usize, distance: usize) -> T {
        match self.classes[class].radius {
            None => T::one(),
            Some(c) => gc_unchecked(T::from_usize_lossy(distance) / c),
        }
    }

    fn validate(&self, layout: &[Site]) -> Result<()> {
        for class in &self.classes {
            if class.ring == 0 {
                return Err(Error::invalid("localization ring length must be positive"));
            }
            if let Some(r) = class.radius {
                if !(r > T::zero()) {
                    return Err(Error::invalid("localization radius must be positive"));
                }
            }
        }
        let parent_class = match self.cross {
            CrossClassRule::ParentTaper { parent_class } => {
                if parent_class >= self.classes.len() {
                    return Err(Error::invalid("parent class out of range"));
                }
                Some(parent_class)
            }
            CrossClassRule::Independent => None,
        };
        for (idx, site) in layout.iter().enumerate() {
            let class = self
                .classes
                .get(site.class)
                .ok_or_else(|| Error::invalid(format!("site {idx}: unknown class {}", site.class)))?;
            if site.position >= class.ring {
                return Err(Error::invalid(format!(
                    "site {idx}: position {} outside ring of {}",
                    site.position, class.ring
                )));
            }
            if let Some(pc) = parent_class {
                if site.class != pc {
                    match site.parent {
                        Some(p) if p < self.classes[pc].ring => {}
                        _ => {
                            return Err(Error::invalid(format!(
                                "site {idx}: child site needs a parent on the parent ring"
                            )))
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Builds the `n×n` localization matrix ρ for `layout`.
pub fn build_localization<T: Real>(spec: &LocalizationSpec<T>, layout: &[Site]) -> Result<Matrix<T>> {
    spec.validate(layout)?;
    let n = layout.len();
    let mut rho = Matrix::<T>::zeros(n, n);
    for a in 0..n {
        rho[(a, a)] = T::one();
        for b in (a + 1)..n {
            let v = entry(spec, &layout[a], &layout[b]);
            rho[(a, b)] = v;
            rho[(b, a)] = v;
        }
    }
    Ok(rho)
}

fn entry<T: Real>(spec: &LocalizationSpec<T>, a: &Site, b: &Site) -> T {
    match spec.cross {
        CrossClassRule::Independent => {
            if a.class != b.class {
                return T::zero();
            }
            let ring = spec.classes[a.class].ring;
            spec.taper(a.class, cyclic_distance(a.position, b.position, ring))
        }
        CrossClassRule::ParentTaper { parent_class } => {
            let anchor = |s: &Site| {
                if s.class == parent_class {
                    s.position
                } else {
                    s.parent.unwrap_or(0)
                }
            };
            if a.class == parent_class && b.class == parent_class {
                let ring = spec.classes[parent_class].ring;
                return spec.taper(parent_class, cyclic_distance(a.position, b.position, ring));
            }
            let ring = spec.classes[parent_class].ring;
            spec.taper(parent_class, cyclic_distance(anchor(a), anchor(b), ring))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SymEig;

    #[test]
    fn gc_reference_values() {
        assert_eq!(gaspari_cohn(0.0, 3.0).unwrap(), 1.0);
        assert_eq!(gaspari_cohn(7.5, 3.0).unwrap(), 0.0);
        assert!((gaspari_cohn(3.0f64, 3.0).unwrap() - 5.0 / 24.0).abs() < 1e-14);
        assert_eq!(gaspari_cohn(6.0, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn gc_rejects_bad_arguments() {
        assert!(gaspari_cohn(-1.0, 1.0).is_err());
        assert!(gaspari_cohn(1.0, 0.0).is_err());
        assert!(gaspari_cohn(1.0f64, -2.0).is_err());
    }

    #[test]
    fn gc_is_continuous_at_breakpoints() {
        for z in [1.0f64, 2.0] {
            let lo = gc_unchecked(z - 1e-9);
            let hi = gc_unchecked(z + 1e-9);
            assert!((lo - hi).abs() < 1e-7, "jump at {z}: {lo} vs {hi}");
        }
    }

    #[test]
    fn gc_monotone_on_fine_grid() {
        let mut prev = 1.0f64;
        let mut d = 0.0;
        while d < 9.0 {
            let v = gaspari_cohn(d, 4.0).unwrap();
            assert!(v <= prev + 1e-15, "increase at {d}");
            prev = v;
            d += 1e-3;
        }
    }

    #[test]
    fn ring_of_forty_radius_four() {
        let (spec, layout) = LocalizationSpec::single_ring(40, Some(4.0));
        let rho = build_localization(&spec, &layout).unwrap();
        for i in 0..40 {
            assert_eq!(rho[(i, i)], 1.0);
            assert_eq!(rho[(i, (i + 8) % 40)], 0.0);
            assert_eq!(rho[(i, (i + 32) % 40)], 0.0);
            assert!(rho[(i, (i + 7) % 40)] > 0.0);
        }
        assert!(SymEig::new(&rho).min_value() >= -1e-8);
    }

    #[test]
    fn no_radius_gives_all_ones() {
        let (spec, layout) = LocalizationSpec::<f64>::single_ring(6, None);
        let rho = build_localization(&spec, &layout).unwrap();
        assert!(rho.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn two_scale_parent_pairs_and_psd() {
        let (spec, layout) = LocalizationSpec::two_scale(20, 10, Some(4.0), Some(40.0));
        let rho = build_localization(&spec, &layout).unwrap();
        assert_eq!(rho.nrows(), 220);
        // x_3 with y_{j,3} for every j.
        for j in 0..10 {
            assert_eq!(rho[(3, 20 + j * 20 + 3)], 1.0);
        }
        // x_0 against a y whose parent is 10 sites away.
        assert_eq!(rho[(0, 20 + 10)], 0.0);
        assert!(SymEig::new(&rho).min_value() >= -1e-8);
        assert!((&rho - rho.transpose()).norm() == 0.0);
    }

    #[test]
    fn inconsistent_layout_is_rejected() {
        let (spec, mut layout) = LocalizationSpec::<f64>::two_scale(4, 2, Some(1.0), Some(2.0));
        layout[5].parent = None;
        assert!(build_localization(&spec, &layout).is_err());
        let (spec, mut layout) = LocalizationSpec::<f64>::single_ring(4, Some(1.0));
        layout[0].position = 9;
        assert!(build_localization(&spec, &layout).is_err());
    }
}
