use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ElementRef, FlError, Granularity};
use crate::cfg::ProgramCfg;
use crate::source::{LineId, SourceModel};
use crate::trace::EstimatedTrace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub granularity: Granularity,
    pub k: usize,
    pub language_label: String,
    pub error_message: String,
    pub labeled_code: String,
    pub max_element_id: usize,
    pub output_template: String,
    /// Prompt id `i` names `elements[i - 1]`; functions are addressed by name.
    pub elements: Vec<ElementRef>,
    /// Code of each prompt line id, for line granularity.
    pub line_texts: Vec<String>,
    pub text: String,
}

impl PromptSpec {
    pub fn hash(&self) -> String {
        let d = Sha256::digest(self.text.as_bytes());
        d.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn element(&self, prompt_id: usize) -> Option<&ElementRef> {
        prompt_id.checked_sub(1).and_then(|i| self.elements.get(i))
    }

    /// Prompt id of a whole-program element, if shown.
    pub fn prompt_id_of(&self, e: &ElementRef) -> Option<usize> {
        self.elements.iter().position(|x| x == e).map(|i| i + 1)
    }
}

fn output_template(g: Granularity) -> &'static str {
    match g {
        Granularity::Function => r#"{"faulty_functions": ["foo", "bar", ...]}"#,
        Granularity::Block => r#"{"faulty_blocks": ["BLOCK 10", "BLOCK 7", ...]}"#,
        Granularity::Line => "10: print(\"This line is faulty!\")\n5: print(\"This line is faulty too!\")\n...",
    }
}

fn id_word(g: Granularity) -> &'static str {
    match g {
        Granularity::Function => "name",
        Granularity::Block => "ID",
        Granularity::Line => "line number",
    }
}

struct Code<'a> {
    model: &'a SourceModel,
    out: String,
    file: Option<usize>,
}

impl Code<'_> {
    fn line(&mut self, l: LineId, label: Option<usize>) {
        let s = self.model.stmt(l);
        if self.model.files.len() > 1 && self.file != Some(s.file) {
            self.out.push_str(&format!("# File: {}\n", self.model.files[s.file].path));
            self.file = Some(s.file);
        }
        if let Some(id) = label {
            self.out.push_str(&format!("{id}: "));
        }
        self.out.push_str(&s.text);
        self.out.push('\n');
    }
}

/// Build the localization prompt over the lines kept by `trace`.
pub fn render_prompt(
    model: &SourceModel,
    cfgs: &ProgramCfg,
    trace: &EstimatedTrace,
    granularity: Granularity,
    k: usize,
    error_message: &str,
) -> Result<PromptSpec, FlError> {
    let kept: BTreeSet<LineId> = trace.executed.iter().copied().filter(|&l| l <= model.line_count()).collect();
    let is_code = |l: &LineId| !model.stmt(*l).is_comment;
    let mut code = Code { model, out: String::new(), file: None };
    let mut elements = Vec::new();
    let mut line_texts = Vec::new();

    match granularity {
        Granularity::Line => {
            for (i, &l) in kept.iter().enumerate() {
                code.line(l, Some(i + 1));
                elements.push(ElementRef::Line(l));
                line_texts.push(model.stmt(l).text.clone());
            }
        }
        Granularity::Block => {
            for b in 1..=cfgs.block_count() {
                let lines: Vec<LineId> = cfgs.block(b).statements.iter().copied().filter(|l| kept.contains(l)).collect();
                if !lines.iter().any(is_code) {
                    continue;
                }
                elements.push(ElementRef::Block(b));
                code.out.push_str(&format!("BLOCK {}\n", elements.len()));
                for l in lines {
                    code.line(l, None);
                }
            }
        }
        Granularity::Function => {
            for f in &model.functions {
                if f.body.iter().any(|l| kept.contains(l) && is_code(l)) {
                    elements.push(ElementRef::Function(f.name.clone()));
                }
            }
            for &l in &kept {
                code.line(l, None);
            }
        }
    }
    if elements.is_empty() {
        return Err(FlError::EmptyTrace(granularity));
    }

    let lang = model.config.language.as_str();
    let el = granularity.as_str();
    let max = elements.len();
    let template = output_template(granularity);
    let labeled_code = code.out;
    let id = id_word(granularity);
    let text = format!(
        "Task Description\n\
As an expert software engineer and tester, your mission is to localize faults in {lang} test scripts at the {el} level. \
You will be provided with the test scripts and the error message caused by the test failure. \
Your goal is to identify {k} {el}s that are most likely responsible for the failure and require modification.\n\
\n\
Inputs\n\
Error Message\n\
Here is the error message caused by the test failure:\n\
{error_message}\n\
\n\
Code\n\
Below are the {lang} test scripts:\n\
{labeled_code}\n\
Task Instructions\n\
1. Carefully examine the provided test scripts and the associated error message.\n\
2. Identify the {k} {el}s that are most likely to contain the faults.\n\
3. Return a list of faulty {el}s and their {id}s, without any additional explanation. \
Note that the list of {el}s and their {id}s should be within the range 1 to {max} and the size of the list must be exactly {k}. \
The list should be also in descending order of likelihood of containing the fault, with the most suspicious {el} first and the least suspicious {el} last. \
Ensure that your response is strictly in the specified format. The output should follow this format:\n\
{template}\n"
    );
    Ok(PromptSpec {
        granularity,
        k,
        language_label: lang.to_string(),
        error_message: error_message.to_string(),
        labeled_code,
        max_element_id: max,
        output_template: template.to_string(),
        elements,
        line_texts,
        text,
    })
}
