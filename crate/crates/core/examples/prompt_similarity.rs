//! Prompts, cosine similarity and the temperatured softmax.

use ndarray::array;
use zsd_kit::embedding::{build_prompt, cosine_similarity, temperatured_softmax, PromptSpec, Temperature};

fn main() -> zsd_kit::Result<()> {
    println!("{}", build_prompt(&PromptSpec::new("dog"))?);
    println!(
        "{}",
        build_prompt(&PromptSpec::with_definition("mouse", "a hand-operated electronic device"))?
    );

    let semantics = array![[0.9, 0.1, 0.0], [0.2, 0.2, 0.9]];
    let refs = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let cos = cosine_similarity(semantics.view(), refs.view())?;
    println!("cosine:\n{cos:.3}");
    for tau in [0.0, 1.0, 3.91] {
        let z = temperatured_softmax(cos.view(), Temperature::new(tau)?)?;
        println!("tau = {tau}:\n{z:.3}");
    }
    Ok(())
}
