//! Default prompt texts.
//!
//! Placeholders use `{name}` and are filled by [`fill`].

use serde::{Deserialize, Serialize};

pub const NAIVE_TOOL_SYSTEM: &str = "\
You are a helpful agent who has access to an abundance of tools.
Always adhere to the following procedure:
1. Identify all individual steps mentioned in the user request.
2. Whenever possible use the tools available to fulfill the user request.
3. Respond to the user with the final result.";

pub const TULIP_SYSTEM: &str = "\
You are a helpful agent who has access to an abundance of tools.
Always adhere to the following procedure:
1. Break the user request down into atomic tasks.
2. Search your tool library for appropriate tools for these atomic tasks using the `search_tools` function. Provide generic task descriptions to ensure that you find generic tools.
3. Whenever possible use the tools found to solve the atomic tasks.
4. Respond to the user with the final result, never with an intermediate result.";

pub const DECOMPOSITION: &str = "\
Considering the following task, what are the necessary steps you need to execute?
`{prompt}`
Return an ordered list of steps.
Return valid JSON and use the key `subtasks`.";

pub const TOOL_SEARCH: &str = "\
Search for suitable tools for each of the following tasks:
{tasks}";

pub const EXECUTION: &str = "\
Now use the tools to fulfill the user request. Adhere exactly to the following steps:
{steps}
Execute the tool calls one at a time.";

pub const BASE_SYSTEM: &str = "You are a helpful agent.";

pub const DECOMPOSITION_FORMAT_REMINDER: &str = "\
Your previous answer could not be parsed. Respond with a single JSON object of the form \
{\"subtasks\": [\"first step\", \"second step\"]} and nothing else.";

pub const LIBRARY_DESCRIPTION_SUFFIX: &str = "\
The following tools are available in your tool library: {description}";

pub const PRIMING_SUFFIX: &str = "\
Your tool library contains tools such as: {names}
Phrase the steps so that they can be solved with individual tools.";

pub const ONE_SHOT_EXAMPLE: &str = "\
Example of a good task decomposition:
Task: `What is the product of 17 and 4, divided by 2?`
{\"subtasks\": [\"Multiply 17 by 4.\", \"Divide the result by 2.\"]}";

pub const AUTO_SYSTEM: &str = "\
You are a helpful agent who has access to an extensible tool library.
You may use the following generic tools as often as necessary and in any order:
- `decompose_task` splits a task into smaller subtasks.
- `search_tool_library` searches the tool library for tools that solve generic task descriptions.
- `create_tool` creates a new tool for a task description if no suitable tool exists.
- `update_tool` changes an existing tool according to an instruction.
- `delete_tool` removes a tool from the tool library.
Always search the tool library before creating a new tool.
Respond to the user with the final result, never with an intermediate result.";

pub const CODEGEN_SYSTEM: &str = "\
You are a very senior Python developer.
You are extremely efficient and return ONLY code.";

pub const CODEGEN_CREATE: &str = "\
Write a single Python function for the following task: {task}
Adhere to the following rules:
1. Use sphinx documentation style without type documentation
2. Add meaningful and slightly verbose docstrings
3. Use python type hints
4. Return only valid code and avoid Markdown syntax for code blocks
5. Avoid adding examples to the docstring";

pub const CODEGEN_UPDATE: &str = "\
Edit the following Python code according to the instruction. Make sure to not change function names in the process.
Instruction: {instruction}
Code:
{code}";

pub const CODEGEN_RETRY: &str = "\
The code could not be validated:
{diagnostics}
Return a corrected version of the complete code.";

pub const GENFUNCS_SYSTEM: &str = CODEGEN_SYSTEM;

pub const GENFUNCS: &str = "\
Please write NUMBER_FUNCTIONS Python functions for solving math tasks related to SUBFIELD.
You may include even trivial functions, such as addition and subtraction.
Adhere to the following rules:
1. Use sphinx documentation style without type documentation
2. Add meaningful and slightly verbose docstrings
3. Use python type hints
4. Return only valid code and avoid Markdown syntax for code blocks
5. Avoid adding examples to the docstring";

pub const GENFUNCS_KNOWN: &str =
    "Make sure to return unique functions and do not include the following ones: KNOWN_FUNCTIONS.";

/// Replaces every `{key}` with its value.
pub fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (key, value) in values {
        out = out.replace(&format!("{{{key}}}"), value);
    }
    out
}

/// `1. first\n2. second`
pub fn numbered(items: &[String]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {}", i + 1, s))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Prompt set used by an agent; every field can be overridden from config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Prompts {
    pub naive_tool_system: String,
    pub tulip_system: String,
    pub base_system: String,
    pub auto_system: String,
    pub decomposition: String,
    pub tool_search: String,
    pub execution: String,
    pub one_shot_example: String,
    pub codegen_system: String,
    pub codegen_create: String,
    pub codegen_update: String,
}

impl Default for Prompts {
    fn default() -> Self {
        Self {
            naive_tool_system: NAIVE_TOOL_SYSTEM.into(),
            tulip_system: TULIP_SYSTEM.into(),
            base_system: BASE_SYSTEM.into(),
            auto_system: AUTO_SYSTEM.into(),
            decomposition: DECOMPOSITION.into(),
            tool_search: TOOL_SEARCH.into(),
            execution: EXECUTION.into(),
            one_shot_example: ONE_SHOT_EXAMPLE.into(),
            codegen_system: CODEGEN_SYSTEM.into(),
            codegen_create: CODEGEN_CREATE.into(),
            codegen_update: CODEGEN_UPDATE.into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decomposition_prompt_is_filled() {
        let p = fill(DECOMPOSITION, &[("prompt", "What is 45342 * 23487 + 32478?")]);
        assert!(p.contains("`What is 45342 * 23487 + 32478?`"));
        assert!(p.ends_with("Return valid JSON and use the key `subtasks`."));
    }

    #[test]
    fn numbered_steps() {
        let steps = vec!["Multiply 45342 by 23487.".to_string(), "Add the result to 32478.".to_string()];
        assert_eq!(numbered(&steps), "1. Multiply 45342 by 23487.\n2. Add the result to 32478.");
        let p = fill(EXECUTION, &[("steps", &numbered(&steps))]);
        assert!(p.ends_with("Execute the tool calls one at a time."));
    }
}
