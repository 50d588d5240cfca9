//! Dataset forge: descriptions, sign labels, instruction templates,
//! dialogues, caption cleanup, image preprocessing and tokenization.

pub mod caption;
pub mod corpus;
pub mod dialogue;
pub mod image;
pub mod instructions;
pub mod rules;
pub mod signs;
pub mod tokenizer;

pub use caption::{clean_caption, filter_modality, prepend_modality, Modality, PretrainPair};
pub use corpus::{
    build_caption_dialogues, build_record, forge_corpus, validate_corpus, validate_record, CaptionDialogue,
    CorpusReport, FundusRecord, ImageRef, Violation, ViolationKind,
};
pub use dialogue::{build_dialogue, render_prompt, DialogueGenerator, DialogueRound, TemplateDialogueGenerator};
pub use image::{enhance_contrast, hsv_to_rgb, rgb_to_hsv, synthetic_fundus, Image};
pub use instructions::{select_instruction, InstructionTemplate, TemplateKind};
pub use rules::{build_description, parse_description, rule_table, DescriptionRule};
pub use signs::{derive_signs, Sign, SignVector, SIGN_COUNT};
pub use tokenizer::{detokenize, tokenize, TokenId, BOS, EOS, PAD};
