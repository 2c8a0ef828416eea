use rand::Rng as _;

use crate::error::{ensure, Error, Result};
use crate::rng::Rng;

/// Lesion counts that determine a synthetic grade.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct LesionInventory {
    pub microaneurysms: u32,
    pub hemorrhages: u32,
    pub hard_exudates: u32,
    pub soft_exudates: u32,
    pub neovascular_tangles: u32,
}

/// Hemorrhage count at which bleeding counts as extensive.
pub const EXTENSIVE_HEMORRHAGES: u32 = 4;

pub const GRADES: usize = 5;

pub fn assign_grade(inv: &LesionInventory) -> u8 {
    if inv.neovascular_tangles > 0 {
        4
    } else if inv.hemorrhages >= EXTENSIVE_HEMORRHAGES || inv.soft_exudates > 0 {
        3
    } else if inv.hemorrhages > 0 || inv.hard_exudates > 0 {
        2
    } else if inv.microaneurysms > 0 {
        1
    } else {
        0
    }
}

/// Draws an inventory whose grade is exactly `grade`.
pub fn sample_inventory(rng: &mut Rng, grade: u8) -> Result<LesionInventory> {
    ensure!(
        (grade as usize) < GRADES,
        Error::Contract(format!("grade must be in 0..=4, got {grade}"))
    );
    let mut inv = LesionInventory::default();
    if grade >= 1 {
        inv.microaneurysms = rng.random_range(1..=4);
    }
    if grade >= 2 {
        if rng.random_bool(0.5) {
            inv.hemorrhages = rng.random_range(1..EXTENSIVE_HEMORRHAGES);
            inv.hard_exudates = rng.random_range(0..=2);
        } else {
            inv.hard_exudates = rng.random_range(1..=3);
        }
    }
    if grade >= 3 {
        if rng.random_bool(0.5) {
            inv.hemorrhages = rng.random_range(EXTENSIVE_HEMORRHAGES..=EXTENSIVE_HEMORRHAGES + 3);
        } else {
            inv.soft_exudates = rng.random_range(1..=2);
        }
    }
    if grade == 4 {
        inv.neovascular_tangles = rng.random_range(1..=2);
    }
    debug_assert_eq!(assign_grade(&inv), grade);
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn grade_rules() {
        assert_eq!(assign_grade(&LesionInventory::default()), 0);
        let ma = LesionInventory {
            microaneurysms: 2,
            ..Default::default()
        };
        assert_eq!(assign_grade(&ma), 1);
        let moderate = LesionInventory {
            microaneurysms: 1,
            hemorrhages: 1,
            hard_exudates: 1,
            ..Default::default()
        };
        assert_eq!(assign_grade(&moderate), 2);
        let severe = LesionInventory {
            hemorrhages: 4,
            ..Default::default()
        };
        assert_eq!(assign_grade(&severe), 3);
        let pdr = LesionInventory {
            neovascular_tangles: 1,
            ..Default::default()
        };
        assert_eq!(assign_grade(&pdr), 4);
    }

    #[test]
    fn sampled_inventories_hit_their_grade() {
        let mut rng = stream(3);
        for g in 0..5u8 {
            for _ in 0..50 {
                assert_eq!(assign_grade(&sample_inventory(&mut rng, g).unwrap()), g);
            }
        }
        assert!(sample_inventory(&mut rng, 5).is_err());
    }
}
