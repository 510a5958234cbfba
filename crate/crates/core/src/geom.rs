//! Fixed-size vector and affine helpers on `[T; 3]`.

use crate::Scalar;

pub type Vec3<T> = [T; 3];

#[inline]
pub fn add<T: Scalar>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub<T: Scalar>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale<T: Scalar>(a: Vec3<T>, s: T) -> Vec3<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn dot<T: Scalar>(a: Vec3<T>, b: Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross<T: Scalar>(a: Vec3<T>, b: Vec3<T>) -> Vec3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm<T: Scalar>(a: Vec3<T>) -> T {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist<T: Scalar>(a: Vec3<T>, b: Vec3<T>) -> T {
    norm(sub(a, b))
}

pub fn normalize<T: Scalar>(a: Vec3<T>) -> Option<Vec3<T>> {
    let n = norm(a);
    if n > T::zero() && n.is_finite() {
        Some(scale(a, T::one() / n))
    } else {
        None
    }
}

/// Distance from `p` to the closed segment `a`–`b`.
pub fn point_segment_distance<T: Scalar>(p: Vec3<T>, a: Vec3<T>, b: Vec3<T>) -> T {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    if len2 == T::zero() {
        return dist(p, a);
    }
    let t = (dot(sub(p, a), ab) / len2).max(T::zero()).min(T::one());
    dist(p, add(a, scale(ab, t)))
}

/// Affine map `x ↦ linear · x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine3<T> {
    pub linear: [[T; 3]; 3],
    pub translation: Vec3<T>,
}

impl<T: Scalar> Affine3<T> {
    pub fn identity() -> Self {
        let (o, z) = (T::one(), T::zero());
        Affine3 {
            linear: [[o, z, z], [z, o, z], [z, z, o]],
            translation: [z; 3],
        }
    }

    pub fn translation(t: Vec3<T>) -> Self {
        Affine3 {
            translation: t,
            ..Self::identity()
        }
    }

    /// Rodrigues rotation about the unit `axis` through `pivot`.
    pub fn rotation_about(axis: Vec3<T>, angle: T, pivot: Vec3<T>) -> Self {
        let (s, c) = angle.sin_cos();
        let t = T::one() - c;
        let [x, y, z] = axis;
        let linear = [
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ];
        let rot = Affine3 {
            linear,
            translation: [T::zero(); 3],
        };
        // p ↦ R(p − pivot) + pivot
        let shifted = sub(pivot, rot.apply_linear(pivot));
        Affine3 {
            linear,
            translation: shifted,
        }
    }

    #[inline]
    pub fn apply_linear(&self, p: Vec3<T>) -> Vec3<T> {
        let m = &self.linear;
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2] * p[2],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2] * p[2],
            m[2][0] * p[0] + m[2][1] * p[1] + m[2][2] * p[2],
        ]
    }

    #[inline]
    pub fn apply(&self, p: Vec3<T>) -> Vec3<T> {
        add(self.apply_linear(p), self.translation)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        let mut linear = [[T::zero(); 3]; 3];
        for (i, row) in linear.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..3).map(|k| self.linear[i][k] * other.linear[k][j]).sum();
            }
        }
        Affine3 {
            linear,
            translation: self.apply(other.translation),
        }
    }
}
