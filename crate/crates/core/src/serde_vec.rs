//! Serde helpers: nalgebra vectors as flat TOML arrays.

use nalgebra::Vector3;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub mod vec3 {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Vector3<f64>, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vector3<f64>, D::Error> {
        let a = <[f64; 3]>::deserialize(d)?;
        Ok(Vector3::new(a[0], a[1], a[2]))
    }
}

pub mod vec3x4 {
    use super::*;

    pub fn serialize<S: Serializer>(v: &[Vector3<f64>; 4], s: S) -> Result<S::Ok, S::Error> {
        let a: [[f64; 3]; 4] = std::array::from_fn(|i| [v[i].x, v[i].y, v[i].z]);
        a.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[Vector3<f64>; 4], D::Error> {
        let a = <[[f64; 3]; 4]>::deserialize(d)?;
        Ok(std::array::from_fn(|i| Vector3::new(a[i][0], a[i][1], a[i][2])))
    }
}
