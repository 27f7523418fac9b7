//! System prompts for each stage. The requirement-analysis and
//! algorithm-design prompts follow published templates; the implementation,
//! debugging and annotation prompts are reconstructions and are marked so in
//! [`catalog`].

use crate::llm::StageTag;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Template {
    pub id: &'static str,
    pub stage: StageTag,
    /// True when the original wording was unavailable and this text was
    /// written from the stage description alone.
    pub reconstructed: bool,
    pub text: &'static str,
}

pub const REQUIREMENT_ANALYSIS: &str = r#"Current phase: Requirement Analysis.

Task
- Parse the user's geospatial programming request and extract the 8 key elements listed below.
- Judge whether each element is complete; missing required information will be requested from the user.
- Produce a JSON "User Requirements Document" that will be stored in the shared information pool.

Step 1. Identify the elements. Fill an element only if the request states it; otherwise leave it blank ("").
- Platform: the cloud platform or local toolkit the code targets
- Programming_Language: the language the code is written in
- Analysis_Goal: the concrete analysis or task objective
- Spatial_Extent: the geographic area or coordinates
- Temporal_Extent: the time range of the analysis
- Data_Source_and_Format: the input data source and its format
- Analysis_Methodology: the analysis technique or method
- Output_Format: the form and format of the result

Step 2. Completeness rules.
- Required: Platform, Programming_Language, Analysis_Goal, Data_Source_and_Format, Output_Format.
- Conditional: Spatial_Extent, Temporal_Extent. Needed or not depending on Analysis_Goal.
- Optional: Analysis_Methodology. Use it if given; it may be inferred later.

Step 3. Reply with only the JSON document, in exactly this shape:
{
  "document_type": "User Requirements Document",
  "requirements": {
    "Platform": "",
    "Programming_Language": "",
    "Analysis_Goal": "",
    "Spatial_Extent": "",
    "Temporal_Extent": "",
    "Data_Source_and_Format": "",
    "Analysis_Methodology": "",
    "Output_Format": ""
  }
}"#;

pub const CONDITIONAL_NEED: &str = r#"Current phase: Requirement Analysis (conditional item check).

Decide from the analysis goal whether the task needs
1. a spatial extent (a geographic area, region or coordinates), and
2. a temporal extent (a date, year, period or time range).

Reply with exactly two words separated by a slash, spatial first: yes/yes, yes/no, no/yes or no/no."#;

pub const METHODOLOGY_INFERENCE: &str = r#"Current phase: Requirement Analysis (optional item inference).

The user did not state an analysis methodology. From the requirements below, name the analysis technique or method that best fits the goal.
Reply with the methodology name only, on a single line, without explanation."#;

pub const ALGORITHM_DESIGN: &str = r#"Current phase: Algorithm Design.

Task
- Take the User Requirements Document from the shared information pool and turn it into a multi-step algorithmic workflow.
- Apply divide and conquer: split the work into modules that each do a single job, have a clear input-output relation and compose cleanly.
- Produce a JSON "Algorithm Design Document" that will be stored in the shared information pool.

Step 1. Read and analyse the requirements.
Step 2. Decompose into independent modules. Every module needs:
- Module_Description: the module's core responsibility
- Input: the module's input parameters
- Output: what the module produces
- Implementation_Details: the key logic and steps
Step 3. Reply with only the JSON document, in exactly this shape (one object per module, Module_Sequence counting from 1):
{
  "Document_Type": "Algorithm Design Document",
  "Algorithm": [
    {
      "Module_Sequence": 1,
      "Module_Name": "",
      "Module_Description": "",
      "Input": "",
      "Output": "",
      "Implementation_Details": ""
    }
  ]
}"#;

pub const CODE_IMPLEMENTATION: &str = r#"Current phase: Code Implementation.

Task
- Write the complete program for the user requirements and the algorithm design provided.
- Implement every module of the design, in sequence, on the requested platform and in the requested programming language.
- Use only functions, operators and dataset paths that exist on the target platform. When reference knowledge is supplied below, prefer the exact names and access snippets it gives.
- Reply with the source code only, in a single fenced code block."#;

pub const CODE_DEBUGGING: &str = r#"Current phase: Code Debugging.

Task
- The user executed the current program and reported the result below.
- If the program did not run, fix the cause of the console error.
- If it ran but the result was wrong, fix the logic so the output matches the expectation.
- Keep the module structure of the program; change only what the fix needs.
- Reply with the complete corrected source code only, in a single fenced code block."#;

pub const CODE_ANNOTATION: &str = r#"Current phase: Code Annotation.

Task
- Add comments to the final program below without changing any executable line.
- Begin the file with a header block of comment lines, exactly:
  <comment> Created: <creation time given below>
  <comment> Platform: <applicable platform>
  <comment> Description: <one-sentence summary of what the program does>
- Add at least one concise comment per algorithm module, each on its own line above the code it explains.
- Use only the comment syntax of the program's language: <comment> is given below.
- Existing comments may be reworded for consistency; code lines must stay exactly as they are.
- Reply with the complete annotated source code only, in a single fenced code block."#;

pub fn catalog() -> &'static [Template] {
    const CATALOG: &[Template] = &[
        Template {
            id: "requirement_analysis",
            stage: StageTag::RequirementAnalysis,
            reconstructed: false,
            text: REQUIREMENT_ANALYSIS,
        },
        Template {
            id: "conditional_need",
            stage: StageTag::RequirementAnalysis,
            reconstructed: true,
            text: CONDITIONAL_NEED,
        },
        Template {
            id: "methodology_inference",
            stage: StageTag::RequirementAnalysis,
            reconstructed: true,
            text: METHODOLOGY_INFERENCE,
        },
        Template {
            id: "algorithm_design",
            stage: StageTag::AlgorithmDesign,
            reconstructed: false,
            text: ALGORITHM_DESIGN,
        },
        Template {
            id: "code_implementation",
            stage: StageTag::CodeImplementation,
            reconstructed: true,
            text: CODE_IMPLEMENTATION,
        },
        Template {
            id: "code_debugging",
            stage: StageTag::CodeDebugging,
            reconstructed: true,
            text: CODE_DEBUGGING,
        },
        Template {
            id: "code_annotation",
            stage: StageTag::CodeAnnotation,
            reconstructed: true,
            text: CODE_ANNOTATION,
        },
    ];
    CATALOG
}
