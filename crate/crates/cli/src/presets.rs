//! Built-in scenario presets. A config names its parent with `preset = "..."`
//! and overrides any subset of its keys.

pub const TABLE2_PROTOTYPE: &str = r#"
[scene]
preset = "metal-plate-range"
distance = 4.0

[trajectory]
kind = "single"
pose = { x = 0.0, y = 0.0, heading = 0.0 }

[ofdm]
n_subcarriers = 1024
active_subcarriers = 792
subcarrier_spacing = 120e3
cp_samples = 72
sample_rate = 122.88e6
symbols_per_beam = 12

[array]
n_elements = 8
spacing_ratio = 0.5
codebook_bits = 6

[sensing]
snr_db = 10.0
hardware_delay = 32e-6
snr_reference = "unit-path"
calibration_reference = "strongest-path"

[ranging]
iterations = 20
threshold_db = -13.0
"#;

pub const FIG6_CNV: &str = r#"
preset = "table2-prototype"

[scene]
preset = "cnv-arena"

[trajectory]
kind = "circle"
center = [0.0, 0.0]
radius = 5.0
n_poses = 60
"#;

pub const FIG8_TWOTARGET: &str = r#"
preset = "table2-prototype"

[two_target]
ranges = [8.0, 9.0]
gains = [1.0, 0.3]
azimuth = 0.7853981633974483
"#;

pub const NAMES: [&str; 3] = ["table2-prototype", "fig6-cnv", "fig8-twotarget"];

pub fn lookup(name: &str) -> Option<&'static str> {
    match name {
        "table2-prototype" => Some(TABLE2_PROTOTYPE),
        "fig6-cnv" => Some(FIG6_CNV),
        "fig8-twotarget" => Some(FIG8_TWOTARGET),
        _ => None,
    }
}
