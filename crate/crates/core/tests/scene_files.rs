use std::path::Path;

use ridegym::sim::ScenarioConfig;

#[test]
fn shipped_scene_files_match_the_built_in_scenes() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenes");
    for (n, p) in [(1, 0.1), (2, 0.2), (3, 0.4), (4, 0.02)] {
        let file = ScenarioConfig::from_json_file(dir.join(format!("scene{n}.json"))).unwrap();
        assert_eq!(file, ScenarioConfig::scene(n).unwrap());
        assert_eq!(file.change_probability, p);
    }
}
