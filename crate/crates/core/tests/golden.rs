mod common;

use llmclf::prompt::{registry, render, RenderInput};

#[test]
fn every_template_has_a_golden_file() {
    let mut names: Vec<String> = common::goldens().into_iter().map(|g| g.template).collect();
    names.sort();
    let registered: Vec<String> = registry().into_keys().collect();
    assert_eq!(names, registered);
}

#[test]
fn rendered_prompts_match_golden_files_byte_for_byte() {
    let reg = registry();
    for g in common::goldens() {
        let p = render(
            &reg[&g.template],
            RenderInput {
                topic: &g.input.topic,
                text: &g.input.text,
                examples: &g.input.examples,
                last_gen: g.input.last_gen.as_deref(),
            },
        )
        .unwrap();
        if let Err(e) = common::compare(&g, &p) {
            panic!("{e}");
        }
    }
}
