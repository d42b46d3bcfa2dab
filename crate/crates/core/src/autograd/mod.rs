//! Reverse-mode automatic differentiation over [`Tensor`](crate::tensor::Tensor)s.

mod gradcheck;
mod graph;
pub(crate) mod kernels;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, WorstCoord};
pub use graph::{Activation, Graph, OpKind, Var};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::params::ParamStore;
    use crate::tensor::{Shape, Tensor};

    fn t(dims: [usize; 4], data: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(dims, data).unwrap()
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t([1, 1, 1, 2], vec![1.0, 2.0]).with_requires_grad());
        let err = g.backward(x, &mut ParamStore::new()).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn sum_and_square_gradients() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t([1, 2, 1, 2], vec![1.0, -2.0, 3.0, 0.5]).with_requires_grad());
        let s = g.sum(x).unwrap();
        g.backward(s, &mut ParamStore::new()).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0; 4]);

        let mut g = Graph::<f64>::new();
        let x = g.input(t([1, 2, 1, 2], vec![1.0, -2.0, 3.0, 0.5]).with_requires_grad());
        let sq = g.mul(x, x).unwrap();
        let s = g.sum(sq).unwrap();
        g.backward(s, &mut ParamStore::new()).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0, 6.0, 1.0]);
    }

    #[test]
    fn shape_mismatches_are_dimension_errors() {
        let mut g = Graph::<f64>::new();
        let a = g.input(Tensor::zeros(Shape::new(1, 2, 4, 4).unwrap()));
        let b = g.input(Tensor::zeros(Shape::new(1, 3, 4, 4).unwrap()));
        assert!(matches!(g.add(a, b), Err(Error::Dimension(_))));
        assert!(matches!(g.mul(a, b), Err(Error::Dimension(_))));
        let c = g.concat_channels(a, b).unwrap();
        assert_eq!(g.shape(c), Shape::new(1, 5, 4, 4).unwrap());
        let odd = g.input(Tensor::zeros(Shape::new(1, 1, 3, 4).unwrap()));
        assert!(matches!(g.max_pool2(odd), Err(Error::Dimension(_))));
        let w = g.input(Tensor::zeros(Shape::new(4, 3, 3, 3).unwrap()));
        let msg = g.conv2d(a, w, None, 1, 1).unwrap_err().to_string();
        assert!(msg.contains("(1, 2, 4, 4)") && msg.contains("(4, 3, 3, 3)"), "{msg}");
    }

    #[test]
    fn inference_graph_refuses_backward() {
        let mut g = Graph::<f64>::inference();
        let x = g.input(Tensor::scalar(1.0).with_requires_grad());
        assert!(g.backward(x, &mut ParamStore::new()).is_err());
    }

    #[test]
    fn relu_derivative_at_zero_is_zero() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).with_requires_grad());
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
        let s = g.sum(y).unwrap();
        g.backward(s, &mut ParamStore::new()).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn max_pool_ties_route_to_first_cell() {
        let mut g = Graph::<f64>::new();
        let x = g.input(t([1, 1, 2, 2], vec![5.0, 5.0, 5.0, 5.0]).with_requires_grad());
        let y = g.max_pool2(x).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s, &mut ParamStore::new()).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn shared_parameter_gradient_is_summed() {
        let mut store = ParamStore::<f64>::new();
        let id = store.add("p", Tensor::scalar(3.0)).unwrap();
        let mut g = Graph::new();
        let p1 = g.param(&store, id);
        let p2 = g.param(&store, id);
        assert_eq!(p1, p2);
        let y = g.mul(p1, p2).unwrap();
        g.backward(y, &mut store).unwrap();
        assert_eq!(store.tensor(id).grad().unwrap(), &[6.0]);
    }

    #[test]
    fn op_count_excludes_leaves() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::scalar(1.0));
        let y = g.scale(x, 2.0).unwrap();
        let _ = g.add(y, x).unwrap();
        assert_eq!(g.op_count(), 2);
        assert_eq!(g.kind(y), OpKind::Scale);
    }
}
