use halluc_web::Demo;
use serde_json::Value;

#[test]
fn full_session_runs_natively() {
    let mut demo = Demo::new(3, 0.1).unwrap();
    let size = demo.image_size();
    let classes: Value = serde_json::from_str(&demo.classes()).unwrap();
    let novel: Vec<u32> = serde_json::from_value(classes["novel"].clone()).unwrap();
    assert_eq!(novel.len(), 2);
    assert_eq!(demo.gallery().len(), 6 * 4 * size * size * 4);

    assert!(
        demo.hallucinate(8, 2, false).is_err(),
        "needs a finetuned model"
    );
    let p: Value = serde_json::from_str(&demo.train_base(5).unwrap()).unwrap();
    assert_eq!(p["steps"], 5);
    demo.finetune(5).unwrap();

    let rows: Vec<Value> = serde_json::from_str(&demo.hallucinate(8, 3, true).unwrap()).unwrap();
    assert_eq!(rows.len(), 16);
    for class in &novel {
        let mine: Vec<&Value> = rows.iter().filter(|r| r["class"] == *class).collect();
        assert_eq!(mine.iter().filter(|r| r["selected"] == true).count(), 3);
        let scores: Vec<f64> = mine.iter().map(|r| r["score"].as_f64().unwrap()).collect();
        assert!(scores.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(demo.candidates(*class).len(), 8 * size * size * 4);
        assert_eq!(demo.support(*class).len(), size * size * 4);
    }
    assert!(demo.hallucinate(8, 9, false).is_err());
}
