/// One physiological variable of the default schema, with the marginal
/// distribution the synthetic generator draws from.
#[derive(Clone, Copy, Debug)]
pub struct VariableSpec {
    pub name: &'static str,
    pub mean: f64,
    pub sd: f64,
    pub min: f64,
    pub max: f64,
    pub decimals: u32,
    /// Direction in which the variable moves for patients who die
    /// (`0` = uninformative).
    pub risk_direction: f64,
}

const fn var(
    name: &'static str,
    mean: f64,
    sd: f64,
    min: f64,
    max: f64,
    decimals: u32,
    risk_direction: f64,
) -> VariableSpec {
    VariableSpec {
        name,
        mean,
        sd,
        min,
        max,
        decimals,
        risk_direction,
    }
}

/// The 16 bedside variables of the eICU benchmark, in file order. Glasgow
/// coma components are carried as numeric scores.
pub const DEFAULT_VARIABLES: [VariableSpec; 16] = [
    var("Diastolic blood pressure", 62.0, 13.0, 20.0, 140.0, 0, -1.0),
    var("Fraction inspired oxygen", 0.45, 0.15, 0.21, 1.0, 2, 1.0),
    var("Glasgow coma scale eye", 3.2, 0.9, 1.0, 4.0, 0, -1.0),
    var("Glasgow coma scale motor", 5.3, 1.2, 1.0, 6.0, 0, -1.0),
    var("Glasgow coma scale total", 12.5, 3.2, 3.0, 15.0, 0, -1.0),
    var("Glasgow coma scale verbal", 3.6, 1.4, 1.0, 5.0, 0, -1.0),
    var("Glucose", 140.0, 45.0, 40.0, 500.0, 0, 1.0),
    var("Heart Rate", 88.0, 17.0, 30.0, 200.0, 0, 1.0),
    var("Height", 170.0, 10.0, 140.0, 210.0, 1, 0.0),
    var("Mean arterial pressure", 80.0, 14.0, 30.0, 160.0, 0, -1.0),
    var("Oxygen saturation", 96.0, 3.0, 60.0, 100.0, 0, -1.0),
    var("Respiratory rate", 19.0, 5.0, 5.0, 50.0, 0, 1.0),
    var("Systolic blood pressure", 122.0, 21.0, 60.0, 240.0, 0, -1.0),
    var("Temperature", 36.9, 0.7, 33.0, 41.0, 1, 1.0),
    var("Weight", 82.0, 22.0, 35.0, 200.0, 1, 0.0),
    var("pH", 7.38, 0.07, 6.8, 7.7, 2, -1.0),
];

pub fn default_schema() -> Vec<String> {
    DEFAULT_VARIABLES.iter().map(|v| v.name.to_string()).collect()
}

/// Common ICU admission diagnoses (ICD-9), used as synthetic code names.
pub const SYNTHETIC_CODES: [&str; 30] = [
    "428.0", "250.00", "401.9", "584.9", "038.9", "518.81", "486", "427.31", "414.01", "496",
    "585.9", "276.1", "285.9", "410.71", "434.91", "572.2", "995.92", "785.52", "272.4",
    "244.9", "530.81", "311", "305.1", "780.39", "560.1", "599.0", "493.90", "291.81",
    "348.31", "707.03",
];
