use nalgebra::Vector2;

use crate::scalar::Scalar;

/// Closed planar polygon; the last vertex connects back to the first.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon<T: Scalar = f64> {
    vertices: Vec<Vector2<T>>,
}

impl<T: Scalar> Polygon<T> {
    pub fn new(vertices: Vec<Vector2<T>>) -> Self {
        Self { vertices }
    }

    pub fn vertices(&self) -> &[Vector2<T>] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = (Vector2<T>, Vector2<T>)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// Shoelace area, positive for counter-clockwise vertex order.
    pub fn signed_area(&self) -> T {
        self.edges().fold(T::zero(), |acc, (a, b)| acc + a.perp(&b)) * T::lit(0.5)
    }

    pub fn area(&self) -> T {
        self.signed_area().abs()
    }

    /// Even-odd containment test.
    pub fn contains(&self, p: &Vector2<T>) -> bool {
        let mut inside = false;
        for (a, b) in self.edges() {
            if (a.y > p.y) != (b.y > p.y) {
                let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
                if p.x < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Distance to the boundary, negative inside.
    pub fn signed_distance(&self, p: &Vector2<T>) -> T {
        let d = self
            .edges()
            .map(|(a, b)| point_segment_distance(p, &a, &b))
            .fold(T::max_value().expect("bounded float"), |m, d| m.min(d));
        if self.contains(p) {
            -d
        } else {
            d
        }
    }

    /// `(min, max)` corners of the axis-aligned bounding box.
    pub fn bounds(&self) -> (Vector2<T>, Vector2<T>) {
        let big = T::max_value().expect("bounded float");
        self.vertices.iter().fold(
            (Vector2::new(big, big), Vector2::new(-big, -big)),
            |(lo, hi), v| (lo.inf(v), hi.sup(v)),
        )
    }

    /// True when no two non-adjacent edges touch and the polygon has at
    /// least three vertices and non-zero area.
    pub fn is_simple(&self) -> bool {
        let n = self.vertices.len();
        if n < 3 || self.area() == T::zero() {
            return false;
        }
        let edges: Vec<_> = self.edges().collect();
        for i in 0..n {
            for j in i + 1..n {
                let adjacent = j == i + 1 || (i == 0 && j == n - 1);
                if adjacent {
                    // Adjacent edges may only share their common vertex.
                    let (a, b) = edges[i];
                    let (c, d) = edges[j];
                    let (shared, far_i, far_j) = if j == i + 1 { (b, a, d) } else { (a, b, c) };
                    if collinear_overlap(&shared, &far_i, &far_j) {
                        return false;
                    }
                    continue;
                }
                let (a, b) = edges[i];
                let (c, d) = edges[j];
                if segments_intersect(&a, &b, &c, &d) {
                    return false;
                }
            }
        }
        true
    }

    pub fn map(&self, f: impl Fn(&Vector2<T>) -> Vector2<T>) -> Self {
        Self::new(self.vertices.iter().map(f).collect())
    }
}

pub fn point_segment_distance<T: Scalar>(p: &Vector2<T>, a: &Vector2<T>, b: &Vector2<T>) -> T {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 == T::zero() {
        T::zero()
    } else {
        ((p - a).dot(&ab) / len2).max(T::zero()).min(T::one())
    };
    (a + ab * t - p).norm()
}

fn orientation<T: Scalar>(a: &Vector2<T>, b: &Vector2<T>, c: &Vector2<T>) -> T {
    (b - a).perp(&(c - a))
}

fn on_segment<T: Scalar>(a: &Vector2<T>, b: &Vector2<T>, p: &Vector2<T>) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test (touching counts).
pub fn segments_intersect<T: Scalar>(a: &Vector2<T>, b: &Vector2<T>, c: &Vector2<T>, d: &Vector2<T>) -> bool {
    let zero = T::zero();
    let o1 = orientation(a, b, c);
    let o2 = orientation(a, b, d);
    let o3 = orientation(c, d, a);
    let o4 = orientation(c, d, b);
    if ((o1 > zero && o2 < zero) || (o1 < zero && o2 > zero)) && ((o3 > zero && o4 < zero) || (o3 < zero && o4 > zero)) {
        return true;
    }
    (o1 == zero && on_segment(a, b, c))
        || (o2 == zero && on_segment(a, b, d))
        || (o3 == zero && on_segment(c, d, a))
        || (o4 == zero && on_segment(c, d, b))
}

/// Two edges leaving `shared` in the same direction fold back onto each other.
fn collinear_overlap<T: Scalar>(shared: &Vector2<T>, p: &Vector2<T>, q: &Vector2<T>) -> bool {
    let u = p - shared;
    let v = q - shared;
    u.perp(&v) == T::zero() && u.dot(&v) > T::zero()
}
