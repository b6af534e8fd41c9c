//! Fixed prompt templates for fact generation, the prompt baseline and the
//! function-calling route.

pub const FACT_GENERATION_TEMPLATE: &str = "Convert the given passage into a list of short facts which specifically answer the given question.
Make sure that the facts can be found in the given passage.
The facts should be coherent and succinct sentences with clear and simple syntax.
Do not use pronouns as the subject or object in the syntax of each fact.
The facts should be independent to each other.
Do not create facts from the passage which are not answering the given question.
Add a \"-\" before each fact.

Passage: [ground truth answer]

Question: [question]";

pub const PROMPT_BASELINE_TEMPLATE: &str =
    "Passage: [answer]\n\nConsidering the given passage, the claim [fact] is True or False?";

pub const FAAF_TEMPLATE: &str =
    "Consider the given passage and assign the correct values in the fact checker function.\n\nPassage: [answer]";

pub fn fact_generation_prompt(passage: &str, question: &str) -> String {
    let (head, tail) = FACT_GENERATION_TEMPLATE
        .split_once("[ground truth answer]")
        .expect("template slot");
    let (middle, _) = tail.split_once("[question]").expect("template slot");
    format!("{head}{passage}{middle}{question}")
}

pub fn prompt_baseline(answer: &str, fact: &str) -> String {
    format!("Passage: {answer}\n\nConsidering the given passage, the claim {fact} is True or False?")
}

pub fn faaf_prompt(answer: &str) -> String {
    format!(
        "Consider the given passage and assign the correct values in the fact checker function.\n\nPassage: {answer}"
    )
}

/// Recovers `(answer, fact)` from a rendered baseline prompt.
pub fn parse_prompt_baseline(prompt: &str) -> Option<(&str, &str)> {
    let rest = prompt.strip_prefix("Passage: ")?;
    let (answer, tail) = rest.rsplit_once("\n\nConsidering the given passage, the claim ")?;
    let fact = tail.strip_suffix(" is True or False?")?;
    Some((answer, fact))
}

/// Recovers the answer from a rendered function-calling prompt.
pub fn parse_faaf_prompt(prompt: &str) -> Option<&str> {
    prompt.strip_prefix(
        "Consider the given passage and assign the correct values in the fact checker function.\n\nPassage: ",
    )
}

/// Recovers `(passage, question)` from a rendered fact-generation prompt.
pub fn parse_fact_generation_prompt(prompt: &str) -> Option<(&str, &str)> {
    let (head, _) = FACT_GENERATION_TEMPLATE.split_once("[ground truth answer]")?;
    let rest = prompt.strip_prefix(head)?;
    rest.rsplit_once("\n\nQuestion: ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_round_trip() {
        let p = prompt_baseline("Some text.\n\nMore.", "X is Y.");
        assert!(p.starts_with("Passage: Some text."));
        assert!(p.ends_with("the claim X is Y. is True or False?"));
        assert_eq!(parse_prompt_baseline(&p), Some(("Some text.\n\nMore.", "X is Y.")));

        let f = faaf_prompt("Body");
        assert_eq!(f, "Consider the given passage and assign the correct values in the fact checker function.\n\nPassage: Body");
        assert_eq!(parse_faaf_prompt(&f), Some("Body"));

        assert_eq!(
            prompt_baseline("A", "F"),
            PROMPT_BASELINE_TEMPLATE.replace("[answer]", "A").replace("[fact]", "F")
        );
        assert_eq!(
            prompt_baseline("[fact]", "F"),
            "Passage: [fact]\n\nConsidering the given passage, the claim F is True or False?"
        );
        assert_eq!(faaf_prompt("A"), FAAF_TEMPLATE.replace("[answer]", "A"));

        let g = fact_generation_prompt("P.", "Q?");
        assert_eq!(
            g,
            FACT_GENERATION_TEMPLATE
                .replace("[ground truth answer]", "P.")
                .replace("[question]", "Q?")
        );
        assert!(g.contains("Add a \"-\" before each fact.\n\nPassage: P.\n\nQuestion: Q?"));
        assert_eq!(parse_fact_generation_prompt(&g), Some(("P.", "Q?")));
    }
}
