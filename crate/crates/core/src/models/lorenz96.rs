//! Lorenz96 with site-dependent forcing, single- and two-scale.

use super::Dynamics;
use crate::{Error, Real, Result, Vector};

/// Sign structure of the large-scale advection term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Lorenz96Variant {
    /// `x_{i−1}(x_{i+1} − x_{i−2})`, the usual chaotic form.
    #[default]
    Conventional,
    /// `−x_{i−1}(x_{i−2} + x_{i+1})`, as sometimes printed.
    Literal,
}

#[inline]
fn advection<T: Real>(variant: Lorenz96Variant, prev2: T, prev: T, next: T) -> T {
    match variant {
        Lorenz96Variant::Conventional => prev * (next - prev2),
        Lorenz96Variant::Literal => -prev * (prev2 + next),
    }
}

fn large_scale_into<T: Real>(x: &[T], forcing: &[T], variant: Lorenz96Variant, out: &mut [T]) {
    let d = x.len();
    for i in 0..d {
        let prev2 = x[(i + d - 2) % d];
        let prev = x[(i + d - 1) % d];
        let next = x[(i + 1) % d];
        out[i] = advection(variant, prev2, prev, next) - x[i] + forcing[i];
    }
}

/// Single-scale tendency with cyclic indexing.
pub fn lorenz96_tendency<T: Real>(x: &Vector<T>, forcing: &[T], variant: Lorenz96Variant) -> Result<Vector<T>> {
    if x.len() < 4 {
        return Err(Error::invalid(format!("Lorenz96 needs at least 4 sites, got {}", x.len())));
    }
    if forcing.len() != x.len() {
        return Err(Error::invalid("forcing length differs from state length"));
    }
    let mut out = Vector::zeros(x.len());
    large_scale_into(x.as_slice(), forcing, variant, out.as_mut_slice());
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lorenz96<T> {
    pub forcing: Vec<T>,
    pub variant: Lorenz96Variant,
}

impl<T: Real> Lorenz96<T> {
    pub fn new(forcing: Vec<T>, variant: Lorenz96Variant) -> Result<Self> {
        if forcing.len() < 4 {
            return Err(Error::invalid("Lorenz96 needs at least 4 sites"));
        }
        Ok(Lorenz96 { forcing, variant })
    }
}

impl<T: Real> Dynamics<T> for Lorenz96<T> {
    fn dim(&self) -> usize {
        self.forcing.len()
    }

    fn tendency_into(&self, x: &[T], out: &mut [T]) {
        large_scale_into(x, &self.forcing, self.variant, out);
    }
}

/// Parameters of the two-scale system.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoScaleParams<T> {
    /// Large-scale forcing, one entry per x site.
    pub forcing: Vec<T>,
    /// Coupling strength.
    pub h: T,
    /// Amplitude ratio.
    pub b: T,
    /// Time-scale ratio.
    pub c: T,
    /// Number of small-scale variables per large-scale site.
    pub per_large: usize,
    pub variant: Lorenz96Variant,
}

impl<T: Real> TwoScaleParams<T> {
    pub fn large(&self) -> usize {
        self.forcing.len()
    }

    pub fn dim(&self) -> usize {
        self.large() * (self.per_large + 1)
    }

    pub fn coupling(&self) -> T {
        self.h * self.c / self.b
    }

    /// State index of `y_{j,i}` (zero-based) in the column-stacked layout.
    pub fn y_index(&self, j: usize, i: usize) -> usize {
        self.large() * (1 + j) + i
    }
}

/// Two-scale tendency on the column-stacked state `[x; y_{1,·}; …; y_{d,·}]`.
///
/// The y variables form one ring ordered `y_{1,1}, …, y_{d,1}, y_{1,2}, …`,
/// which encodes `y_{d+1,i} = y_{1,i+1}` and `y_{0,i} = y_{d,i−1}`.
pub fn lorenz96_two_scale_tendency<T: Real>(z: &Vector<T>, params: &TwoScaleParams<T>) -> Result<Vector<T>> {
    if params.large() < 4 {
        return Err(Error::invalid("two-scale Lorenz96 needs at least 4 large-scale sites"));
    }
    if z.len() != params.dim() {
        return Err(Error::invalid(format!(
            "two-scale state has length {}, expected {}",
            z.len(),
            params.dim()
        )));
    }
    let mut out = Vector::zeros(z.len());
    two_scale_into(params, z.as_slice(), out.as_mut_slice());
    Ok(out)
}

fn two_scale_into<T: Real>(params: &TwoScaleParams<T>, z: &[T], out: &mut [T]) {
    let big = params.large();
    let small = params.per_large;
    let ring = big * small;
    let coupling = params.coupling();
    let cb = params.c * params.b;

    let (x, y) = z.split_at(big);
    let (dx, dy) = out.split_at_mut(big);
    large_scale_into(x, &params.forcing, params.variant, dx);

    // Ring position r = i·d + j  <->  column-stacked offset j·D + i.
    let at = |r: usize| {
        let r = r % ring;
        y[(r % small) * big + r / small]
    };
    for i in 0..big {
        let mut sum = T::zero();
        for j in 0..small {
            let r = i * small + j;
            let here = y[j * big + i];
            sum += here;
            let next = at(r + 1);
            let next2 = at(r + 2);
            let prev = at(r + ring - 1);
            dy[j * big + i] = -cb * next * (next2 - prev) - params.c * here + coupling * x[i];
        }
        dx[i] -= coupling * sum;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoScaleLorenz96<T> {
    pub params: TwoScaleParams<T>,
}

impl<T: Real> TwoScaleLorenz96<T> {
    pub fn new(params: TwoScaleParams<T>) -> Result<Self> {
        if params.large() < 4 {
            return Err(Error::invalid("two-scale Lorenz96 needs at least 4 large-scale sites"));
        }
        if !(params.b != T::zero()) {
            return Err(Error::invalid("amplitude ratio b must be non-zero"));
        }
        Ok(TwoScaleLorenz96 { params })
    }
}

impl<T: Real> Dynamics<T> for TwoScaleLorenz96<T> {
    fn dim(&self) -> usize {
        self.params.dim()
    }

    fn tendency_into(&self, x: &[T], out: &mut [T]) {
        two_scale_into(&self.params, x, out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_state_is_fixed_point_of_conventional() {
        let f = vec![8.0; 40];
        let x = Vector::from_element(40, 8.0);
        let dx = lorenz96_tendency(&x, &f, Lorenz96Variant::Conventional).unwrap();
        assert!(dx.norm() < 1e-14);
    }

    #[test]
    fn zero_state_gives_forcing() {
        let f: Vec<f64> = (0..6).map(|i| i as f64 + 0.5).collect();
        for variant in [Lorenz96Variant::Conventional, Lorenz96Variant::Literal] {
            let dx = lorenz96_tendency(&Vector::zeros(6), &f, variant).unwrap();
            assert_eq!(dx.as_slice(), f.as_slice());
        }
    }

    #[test]
    fn literal_variant_direct_evaluation() {
        let x = Vector::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        let dx = lorenz96_tendency(&x, &[8.0; 5], Lorenz96Variant::Literal).unwrap();
        assert_eq!(dx[0], -23.0);
        // Conventional: x_5(x_2 − x_4) − x_1 + 8 = 5·(−2) − 1 + 8.
        let dx = lorenz96_tendency(&x, &[8.0; 5], Lorenz96Variant::Conventional).unwrap();
        assert_eq!(dx[0], -3.0);
    }

    #[test]
    fn too_few_sites_rejected() {
        assert!(lorenz96_tendency(&Vector::zeros(3), &[1.0; 3], Lorenz96Variant::Conventional).is_err());
    }

    fn params(h: f64) -> TwoScaleParams<f64> {
        TwoScaleParams {
            forcing: vec![8.0, 9.0, 10.0, 11.0, 12.0],
            h,
            b: 10.0,
            c: 10.0,
            per_large: 3,
            variant: Lorenz96Variant::Conventional,
        }
    }

    #[test]
    fn two_scale_zero_state() {
        let p = params(1.0);
        let dz = lorenz96_two_scale_tendency(&Vector::zeros(p.dim()), &p).unwrap();
        assert_eq!(&dz.as_slice()[..5], p.forcing.as_slice());
        assert!(dz.as_slice()[5..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn two_scale_decouples_at_zero_h() {
        let p = params(0.0);
        let z = Vector::from_fn(p.dim(), |i, _| ((i * 37) % 11) as f64 - 5.0);
        let dz = lorenz96_two_scale_tendency(&z, &p).unwrap();
        let x = z.rows(0, 5).into_owned();
        let dx = lorenz96_tendency(&x, &p.forcing, Lorenz96Variant::Conventional).unwrap();
        assert_eq!(dz.rows(0, 5).into_owned(), dx);
    }

    #[test]
    fn two_scale_small_scale_ring_and_coupling() {
        let p = params(1.0);
        assert_eq!(p.coupling(), 1.0);
        let mut z = Vector::zeros(p.dim());
        // Only y_{1,2} (zero-based j=0, i=1) non-zero: it sits at ring position 3.
        z[p.y_index(0, 1)] = 2.0;
        let dz = lorenz96_two_scale_tendency(&z, &p).unwrap();
        assert_eq!(dz[p.y_index(0, 1)], -10.0 * 2.0);
        // x_2 feels −(hc/b)·Σ_j y_{j,2}.
        assert_eq!(dz[1], 9.0 - 2.0);
        // Ring neighbour y_{d,1} (ring 2) sees −cb·y_{r+1}(y_{r+2} − y_{r−1}) = 0.
        assert_eq!(dz[p.y_index(2, 0)], 0.0);
        // y_{3,0}: ring position 1, next2 = ring 3.
        assert_eq!(dz[p.y_index(1, 0)], 0.0);
        // Ring position 4 (y_{2,2}): prev = ring 3.
        assert_eq!(dz[p.y_index(1, 1)], 0.0);
        // Ring position 2 (y_{3,1}): next = ring 3 is 2, next2 = 0, prev = 0 → 0.
        let mut z2 = z.clone();
        z2[p.y_index(1, 1)] = 1.0; // ring 4
        let dz2 = lorenz96_two_scale_tendency(&z2, &p).unwrap();
        // ring 2: −100·y3·(y4 − y1) = −100·2·1.
        assert_eq!(dz2[p.y_index(2, 0)], -200.0);
    }

    #[test]
    fn two_scale_length_mismatch() {
        let p = params(1.0);
        assert!(lorenz96_two_scale_tendency(&Vector::zeros(7), &p).is_err());
    }
}
