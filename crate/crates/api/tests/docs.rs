//! The guide's role table and error table must describe the service as built.

use mooclet_api::{status_for, ENDPOINTS};
use mooclet_core::ErrorKind;

const REFERENCE: &str = include_str!("../../../book/src/api-reference.md");

fn table_rows(header: &str) -> Vec<Vec<String>> {
    REFERENCE
        .lines()
        .skip_while(|l| !l.starts_with(header))
        .skip(2)
        .take_while(|l| l.starts_with('|'))
        .map(|l| l.trim_matches('|').split('|').map(|c| c.trim().to_owned()).collect())
        .collect()
}

#[test]
fn role_table_matches_the_router() {
    let rows = table_rows("| method | path |");
    assert_eq!(rows.len(), ENDPOINTS.len());
    let roles = ["platform", "instructor", "researcher", "admin"];
    for (row, ep) in rows.iter().zip(ENDPOINTS) {
        assert_eq!((row[0].as_str(), row[1].as_str()), (ep.method.as_str(), ep.path));
        for (i, role) in roles.iter().enumerate() {
            let documented = row[2 + i] == "yes";
            let served = ep.roles.iter().any(|r| r.as_str() == *role);
            assert_eq!(documented, served, "{} {} for {role}", ep.method, ep.path);
        }
    }
}

#[test]
fn error_table_matches_the_status_mapping() {
    let rows = table_rows("| code | status |");
    assert_eq!(rows.len(), ErrorKind::ALL.len());
    for row in rows {
        let code = row[0].trim_matches('`');
        let kind = ErrorKind::ALL.into_iter().find(|k| k.code() == code).unwrap();
        assert_eq!(row[1], status_for(kind).to_string(), "{code}");
    }
}
