use crate::attack::filter::ScoredCandidate;
use crate::error::Result;
use crate::semantic::prompt::{AttackIntent, Prompt};
use crate::semantic::vector::cosine;
use crate::world::World;

/// `lambda_attr * S_attr - lambda_anc * (1 - s_text)`, where `S_attr` is 1 when the
/// target attribute appears in the caption and otherwise the text cosine
/// between attribute and caption (0 for an empty caption).
pub fn rank_score(
    world: &World,
    s_text: f64,
    caption: &Prompt,
    intent: &AttackIntent,
    lambda_anc: f64,
    lambda_attr: f64,
) -> Result<f64> {
    let s_attr = if caption.contains(&intent.target_attribute) {
        1.0
    } else if caption.is_empty() {
        0.0
    } else {
        let attr = world.text_encoder().embed_tokens([intent.target_attribute.as_str()])?;
        cosine(&attr, &world.embed_text(caption)?)?
    };
    Ok(lambda_attr * s_attr - lambda_anc * (1.0 - s_text))
}

/// Scores and orders candidates by descending rank score; ties keep input order.
pub fn rank_candidates(
    world: &World,
    accepted: Vec<ScoredCandidate>,
    intent: &AttackIntent,
    lambda_anc: f64,
    lambda_attr: f64,
) -> Result<Vec<ScoredCandidate>> {
    let mut scored = accepted
        .into_iter()
        .map(|mut c| {
            let empty = Prompt::from_tokens(Vec::new());
            let caption = c.vf_caption.as_ref().unwrap_or(&empty);
            c.rank_score = Some(rank_score(world, c.s_text, caption, intent, lambda_anc, lambda_attr)?);
            Ok(c)
        })
        .collect::<Result<Vec<_>>>()?;
    // sort_by is stable
    scored.sort_by(|a, b| b.rank_score.unwrap().total_cmp(&a.rank_score.unwrap()));
    Ok(scored)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::DiffusionConfig;

    fn cand(i: usize, s_text: f64, caption: &str) -> ScoredCandidate {
        let mut c = ScoredCandidate::new(i, Prompt::new(caption).unwrap());
        c.s_text = s_text;
        c.vf_caption = Some(Prompt::new(caption).unwrap());
        c
    }

    fn world() -> World {
        World::new(DiffusionConfig::default()).unwrap()
    }

    #[test]
    fn attribute_present_with_full_anchor_match() {
        let w = world();
        let intent = AttackIntent::new("blue", Some("red"));
        let s = rank_score(&w, 1.0, &Prompt::new("a blue fox").unwrap(), &intent, 1.0, 0.7).unwrap();
        assert!((s - 0.7).abs() < 1e-15);
        let s = rank_score(&w, 0.5, &Prompt::new("a blue fox").unwrap(), &intent, 2.0, 1.0).unwrap();
        assert!((s - 0.0).abs() < 1e-15);
    }

    #[test]
    fn zero_attribute_weight_orders_by_text_score() {
        let w = world();
        let intent = AttackIntent::new("blue", None);
        let ranked = rank_candidates(
            &w,
            vec![cand(0, 0.4, "a fox"), cand(1, 0.9, "a blue fox"), cand(2, 0.6, "a fox")],
            &intent,
            1.0,
            0.0,
        )
        .unwrap();
        let order: Vec<usize> = ranked.iter().map(|c| c.index).collect();
        assert_eq!(order, [1, 2, 0]);
    }

    #[test]
    fn ties_keep_pool_order() {
        let w = world();
        let intent = AttackIntent::new("blue", None);
        let ranked = rank_candidates(
            &w,
            vec![cand(3, 1.0, "a blue fox"), cand(1, 1.0, "a blue cat"), cand(2, 1.0, "blue")],
            &intent,
            1.0,
            1.0,
        )
        .unwrap();
        let order: Vec<usize> = ranked.iter().map(|c| c.index).collect();
        assert_eq!(order, [3, 1, 2]);
    }

    #[test]
    fn absent_attribute_uses_embedding_similarity() {
        let w = world();
        let intent = AttackIntent::new("blue", None);
        let s = rank_score(&w, 1.0, &Prompt::new("a red fox").unwrap(), &intent, 1.0, 1.0).unwrap();
        assert!(s < 1.0 && s > -1.0);
        let empty = rank_score(&w, 1.0, &Prompt::from_tokens(vec![]), &intent, 1.0, 1.0).unwrap();
        assert_eq!(empty, 0.0);
    }
}
