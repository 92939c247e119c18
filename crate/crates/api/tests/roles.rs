mod common;

#[test]
fn every_endpoint_and_role_pair_matches_the_documented_matrix() {
    match common::check_role_matrix() {
        Ok(n) => assert_eq!(n, common::EXPECTED_MATRIX.len() * 5),
        Err(failures) => panic!("{}", failures.join("\n")),
    }
}

#[test]
fn router_table_matches_the_documented_matrix() {
    assert_eq!(mooclet_api::ENDPOINTS.len(), common::EXPECTED_MATRIX.len());
    for ep in mooclet_api::ENDPOINTS {
        let (_, _, allowed) = common::EXPECTED_MATRIX
            .iter()
            .find(|(m, p, _)| *m == ep.method.as_str() && *p == ep.path)
            .unwrap();
        let mut roles: Vec<_> = ep.roles.iter().map(|r| r.as_str()).collect();
        let mut expected = allowed.to_vec();
        roles.sort();
        expected.sort();
        assert_eq!(roles, expected, "{} {}", ep.method, ep.path);
    }
}
