use serde::{Deserialize, Serialize};

/// Dense `users × slots` matrix stored row-major (one row per user).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
pub struct UserSlotMatrix {
    users: usize,
    slots: usize,
    data: Vec<f64>,
}

impl UserSlotMatrix {
    pub fn zeros(users: usize, slots: usize) -> Self {
        Self::filled(users, slots, 0.0)
    }

    pub fn filled(users: usize, slots: usize, value: f64) -> Self {
        Self {
            users,
            slots,
            data: vec![value; users * slots],
        }
    }

    pub fn from_fn(users: usize, slots: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(users * slots);
        for k in 0..users {
            for n in 0..slots {
                data.push(f(k, n));
            }
        }
        Self { users, slots, data }
    }

    pub fn users(&self) -> usize {
        self.users
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    #[inline]
    pub fn get(&self, k: usize, n: usize) -> f64 {
        self.data[k * self.slots + n]
    }

    #[inline]
    pub fn set(&mut self, k: usize, n: usize, value: f64) {
        self.data[k * self.slots + n] = value;
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.data[k * self.slots..(k + 1) * self.slots]
    }

    pub fn column_sum(&self, n: usize) -> f64 {
        (0..self.users).map(|k| self.get(k, n)).sum()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().copied()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.users).map(|k| self.row(k).to_vec()).collect()
    }
}

impl From<UserSlotMatrix> for Vec<Vec<f64>> {
    fn from(m: UserSlotMatrix) -> Self {
        m.to_rows()
    }
}

impl TryFrom<Vec<Vec<f64>>> for UserSlotMatrix {
    type Error = String;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        let users = rows.len();
        let slots = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != slots) {
            return Err("ragged user/slot matrix".to_string());
        }
        Ok(Self {
            users,
            slots,
            data: rows.into_iter().flatten().collect(),
        })
    }
}
