use linrank::claims::sub_seed;
use linrank::data::{batches, make_synthetic};
use linrank::model::{evaluate_accuracy, init_network, loss_and_gradients, ArchSpec};
use linrank::optim::sgd_step;

fn train_sgd(
    widths: &[usize],
    ds: &linrank::data::BinaryDataset,
    b: usize,
    lr: f64,
    steps: usize,
) -> linrank::model::LinearNet {
    let mut net = init_network(&ArchSpec::from_widths(widths).unwrap(), 3);
    let mut stream = batches(ds.len(), b, sub_seed(3, 2), true).unwrap();
    for _ in 0..steps {
        let batch = stream.next().unwrap();
        let (x, y) = ds.gather(&batch.indices).unwrap();
        let (loss, grads) = loss_and_gradients(&net, &x, &y).unwrap();
        assert!(loss.is_finite());
        sgd_step(&mut net, &grads, lr).unwrap();
    }
    net
}

#[test]
fn separable_data_is_fit_exactly() {
    let ds = make_synthetic(64, 100, 3.0, 21).unwrap();
    let net = train_sgd(&[64, 16, 8, 2], &ds, 20, 0.5, 400);
    assert_eq!(evaluate_accuracy(&net, &ds).unwrap(), 1.0);
}

#[test]
fn unseparated_data_stays_at_chance() {
    let train = make_synthetic(16, 5000, 0.0, 1).unwrap();
    let fresh = make_synthetic(16, 5000, 0.0, 2).unwrap();
    let net = train_sgd(&[16, 2], &train, 100, 0.5, 300);
    let acc = evaluate_accuracy(&net, &fresh).unwrap();
    assert!((acc - 0.5).abs() <= 0.05, "accuracy {acc}");
}
