use std::collections::BTreeMap;
use std::io::{Read, Write};

use thiserror::Error;

use super::{AttributeSchema, HouseholdRecord, PersonRecord, Population};
use crate::scenario::Zone;

#[derive(Debug, Error)]
pub enum PopulationCsvError {
    #[error("population csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("population csv line {line}: {message}")]
    Invalid { line: u64, message: String },
    #[error("population csv header: {0}")]
    Header(String),
}

/// `person_id,household_id,zone_id,<attribute...>` with category labels.
pub fn write_persons_csv<W: Write>(
    out: W,
    population: &Population,
    schema: &AttributeSchema,
    zones: &[Zone],
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["person_id", "household_id", "zone_id"];
    header.extend(schema.attributes.iter().map(|a| a.name.as_str()));
    w.write_record(&header)?;
    for p in &population.persons {
        let mut row = vec![p.person_id.to_string(), p.household_id.to_string(), zones[p.zone].zone_id.clone()];
        row.extend(
            p.attributes
                .iter()
                .zip(&schema.attributes)
                .map(|(&c, a)| a.categories[c].clone()),
        );
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `household_id,zone_id,size,decision_maker,income_band`.
pub fn write_households_csv<W: Write>(
    out: W,
    population: &Population,
    schema: &AttributeSchema,
    income_attribute: Option<usize>,
    zones: &[Zone],
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["household_id", "zone_id", "size", "decision_maker", "income_band"])?;
    for h in &population.households {
        let income = match (income_attribute, h.income_band) {
            (Some(a), Some(c)) => schema.attributes[a].categories[c].clone(),
            _ => String::new(),
        };
        w.write_record([
            h.household_id.to_string(),
            zones[h.zone].zone_id.clone(),
            h.members.len().to_string(),
            h.decision_maker().to_string(),
            income,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a pre-built person table in the [`write_persons_csv`] layout and
/// rebuilds households from the `household_id` column.
pub fn read_population_csv<R: Read>(
    input: R,
    schema: &AttributeSchema,
    zones: &[Zone],
    income_attribute: Option<usize>,
) -> Result<Population, PopulationCsvError> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PopulationCsvError::Header(format!("missing column `{name}`")))
    };
    let (pid_col, hid_col, zone_col) = (col("person_id")?, col("household_id")?, col("zone_id")?);
    let attr_cols = schema
        .attributes
        .iter()
        .map(|a| col(&a.name))
        .collect::<Result<Vec<_>, _>>()?;
    let zone_lookup: BTreeMap<&str, usize> =
        zones.iter().enumerate().map(|(i, z)| (z.zone_id.as_str(), i)).collect();

    let mut persons = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let invalid = |message: String| PopulationCsvError::Invalid { line, message };
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let person_id: u32 = field(pid_col).parse().map_err(|_| invalid(format!("bad person_id `{}`", field(pid_col))))?;
        let household_id: u32 =
            field(hid_col).parse().map_err(|_| invalid(format!("bad household_id `{}`", field(hid_col))))?;
        let zone = *zone_lookup
            .get(field(zone_col))
            .ok_or_else(|| invalid(format!("unknown zone `{}`", field(zone_col))))?;
        let attributes = attr_cols
            .iter()
            .enumerate()
            .map(|(a, &c)| {
                schema
                    .category_index(a, field(c))
                    .ok_or_else(|| invalid(format!("unknown {} category `{}`", schema.attributes[a].name, field(c))))
            })
            .collect::<Result<Vec<_>, _>>()?;
        persons.push(PersonRecord { person_id, household_id, zone, attributes });
    }
    persons.sort_by_key(|p| p.person_id);
    if let Some(w) = persons.windows(2).find(|w| w[0].person_id == w[1].person_id) {
        return Err(PopulationCsvError::Invalid { line: 0, message: format!("duplicate person_id {}", w[0].person_id) });
    }

    let mut grouped: BTreeMap<u32, HouseholdRecord> = BTreeMap::new();
    for p in &persons {
        let h = grouped.entry(p.household_id).or_insert_with(|| HouseholdRecord {
            household_id: p.household_id,
            zone: p.zone,
            members: Vec::new(),
            income_band: income_attribute.map(|a| p.attributes[a]),
        });
        if h.zone != p.zone {
            return Err(PopulationCsvError::Invalid {
                line: 0,
                message: format!("household {} spans several zones", p.household_id),
            });
        }
        h.members.push(p.person_id);
    }
    Ok(Population { persons, households: grouped.into_values().collect() })
}
